#pragma once

// Flat JSON config files for CLI11: {"flag-name": value, ...}.

#include <CLI11.hpp>
#include <json.hpp>

#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace q2l::app {

inline std::string json_scalar_to_input(const nlohmann::json& v, const std::string& key) {
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) {
        std::ostringstream os;
        os.precision(17);
        os << v.get<double>();
        return os.str();
    }
    if (v.is_string()) return v.get<std::string>();
    throw CLI::ConfigError("config key '" + key + "' must hold a scalar or an array of scalars");
}

/// Turns "3" into 3, "true" into true and leaves other strings alone, so a
/// dumped config reads naturally.
inline nlohmann::ordered_json input_to_json(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    if (!s.empty()) {
        try {
            std::size_t used = 0;
            const long long i = std::stoll(s, &used);
            if (used == s.size()) return i;
        } catch (const std::exception&) {
        }
        try {
            std::size_t used = 0;
            const double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
    }
    return s;
}

/// `section` names the subcommand that flat keys belong to; it is queried
/// when the file is read, after the command line has been parsed.
class JsonConfig : public CLI::Config {
public:
    JsonConfig() = default;
    explicit JsonConfig(std::function<std::string()> section) : section_(std::move(section)) {}

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            const std::string name = opt->get_single_name();
            if (name.empty() || !opt->get_configurable() || opt->get_lnames().empty()) continue;
            if (opt->count() > 0) {
                const auto& res = opt->results();
                if (opt->get_expected_max() > 1) {
                    auto arr = nlohmann::ordered_json::array();
                    for (const auto& r : res) arr.push_back(input_to_json(r));
                    j[name] = arr;
                } else if (opt->get_type_size() == 0) {
                    j[name] = opt->as<bool>();
                } else {
                    j[name] = input_to_json(res.back());
                }
            } else if (default_also) {
                const std::string d = opt->get_default_str();
                if (opt->get_type_size() == 0)
                    j[name] = d == "true" || d == "1";
                else if (!d.empty())
                    j[name] = input_to_json(d);
            }
        }
        return j.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConfigError("config file must hold a flat JSON object");
        const std::string prefix = section_ ? section_() : std::string();
        std::vector<CLI::ConfigItem> items;
        for (auto it = j.begin(); it != j.end(); ++it) {
            CLI::ConfigItem item;
            item.name = it.key();
            if (!prefix.empty()) item.parents.push_back(prefix);
            if (it.value().is_array()) {
                for (const auto& v : it.value()) item.inputs.push_back(json_scalar_to_input(v, it.key()));
            } else {
                item.inputs.push_back(json_scalar_to_input(it.value(), it.key()));
            }
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    std::function<std::string()> section_;
};

}  // namespace q2l::app
