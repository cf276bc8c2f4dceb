#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace cellbloom::cli {

// Option values of an app and its invoked subcommands, keyed by long name
// without dashes. Subcommands nest under their own name.
inline nlohmann::ordered_json resolved_options(const CLI::App& app) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help" || opt->get_lnames().front() == "config") {
            continue;
        }
        const std::string& name = opt->get_lnames().front();
        std::vector<std::string> values = opt->results();
        if (values.empty() && !opt->get_default_str().empty()) values.push_back(opt->get_default_str());
        if (values.empty()) {
            out[name] = nullptr;
        } else if (values.size() == 1) {
            out[name] = values.front();
        } else {
            out[name] = values;
        }
    }
    for (const CLI::App* sub : app.get_subcommands()) out[sub->get_name()] = resolved_options(*sub);
    return out;
}

// CLI11 config reader for one JSON document. Top-level keys set global
// options; an object keyed by a subcommand name sets that subcommand's
// options. Values given on the command line win.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
        return resolved_options(*app).dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(input);
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError("config", std::string("config file is not valid JSON: ") + e.what());
        }
        if (!doc.is_object()) throw CLI::ConversionError("config", "config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        collect(doc, {}, items);
        return items;
    }

private:
    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto nested = parents;
                nested.push_back(key);
                collect(value, nested, items);
                continue;
            }
            if (value.is_null()) continue;
            CLI::ConfigItem item;
            item.parents = parents;
            // Accept snake_case spellings of dashed flag names.
            item.name = key;
            std::replace(item.name.begin(), item.name.end(), '_', '-');
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }
};

}  // namespace cellbloom::cli
