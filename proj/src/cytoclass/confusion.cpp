#include "cellbloom/cytoclass/confusion.hpp"

#include <sstream>
#include <stdexcept>

namespace cellbloom::cytoclass {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
    if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
    counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
    if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
        throw std::out_of_range("confusion matrix index out of range");
    }
    counts_[static_cast<std::size_t>(truth) * classes_ + predicted] += count;
}

std::uint64_t ConfusionMatrix::at(int truth, int predicted) const {
    if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
        throw std::out_of_range("confusion matrix index out of range");
    }
    return counts_[static_cast<std::size_t>(truth) * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
    std::uint64_t s = 0;
    for (int j = 0; j < classes_; ++j) s += at(truth, j);
    return s;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t s = 0;
    for (int i = 0; i < classes_; ++i) s += at(i, i);
    return s;
}

double ConfusionMatrix::overall_accuracy() const {
    const auto n = total();
    if (n == 0) throw std::logic_error("accuracy of an empty confusion matrix");
    return static_cast<double>(trace()) / static_cast<double>(n);
}

std::optional<double> ConfusionMatrix::recall(int truth) const {
    const auto n = row_sum(truth);
    if (n == 0) return std::nullopt;
    return static_cast<double>(at(truth, truth)) / static_cast<double>(n);
}

double ConfusionMatrix::macro_accuracy() const {
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < classes_; ++i) {
        if (auto r = recall(i)) {
            sum += *r;
            ++present;
        }
    }
    if (present == 0) throw std::logic_error("macro accuracy of an empty confusion matrix");
    return sum / present;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw std::invalid_argument("confusion matrix sizes differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& names) const {
    if (static_cast<int>(names.size()) != classes_) throw std::invalid_argument("class name count mismatch");
    std::ostringstream out;
    out << "true\\predicted";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (int i = 0; i < classes_; ++i) {
        out << names[static_cast<std::size_t>(i)];
        for (int j = 0; j < classes_; ++j) out << ',' << at(i, j);
        out << '\n';
    }
    return out.str();
}

std::vector<std::vector<std::uint64_t>> ConfusionMatrix::rows() const {
    std::vector<std::vector<std::uint64_t>> out(static_cast<std::size_t>(classes_));
    for (int i = 0; i < classes_; ++i)
        for (int j = 0; j < classes_; ++j) out[static_cast<std::size_t>(i)].push_back(at(i, j));
    return out;
}

}  // namespace cellbloom::cytoclass
