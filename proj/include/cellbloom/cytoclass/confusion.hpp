#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cellbloom::cytoclass {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes = 7);

    int classes() const { return classes_; }
    void add(int truth, int predicted, std::uint64_t count = 1);
    std::uint64_t at(int truth, int predicted) const;
    std::uint64_t row_sum(int truth) const;
    std::uint64_t total() const;
    std::uint64_t trace() const;

    // trace / total; throws on an empty matrix.
    double overall_accuracy() const;
    // at(i, i) / row_sum(i), or nullopt when the row is empty.
    std::optional<double> recall(int truth) const;
    // Mean recall over classes with at least one sample.
    double macro_accuracy() const;

    // Entrywise sum; both matrices must have the same size.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

    // Header row of predicted-class names, then one row per true class.
    std::string to_csv(const std::vector<std::string>& names) const;
    std::vector<std::vector<std::uint64_t>> rows() const;

private:
    int classes_;
    std::vector<std::uint64_t> counts_;
};

}  // namespace cellbloom::cytoclass
