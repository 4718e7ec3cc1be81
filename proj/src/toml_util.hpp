#pragma once

// Strict accessors over toml++ tables. Every error is InvalidConfig and names
// the offending key path.

#include <toml.hpp>

#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/error.hpp"

namespace cascade::tomlu {

inline toml::table parse(std::string_view text, std::string_view source) {
    try {
        return toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, std::string(source) + ": " + std::string(e.description()));
    }
}

inline void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, std::string_view where) {
    for (const auto& [key, _] : t) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key.str() == a;
        if (!ok) throw Error(ErrorKind::InvalidConfig, "unknown key '" + std::string(key.str()) + "' in " + std::string(where));
    }
}

inline const toml::table& table_at(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* sub = t.get_as<toml::table>(key);
    if (!sub) throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be a table");
    return *sub;
}

inline std::optional<std::string> opt_string(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    if (auto v = node->value<std::string>(); v && node->is_string()) return v;
    throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be a string");
}

inline std::string req_string(const toml::table& t, std::string_view key, std::string_view where) {
    auto v = opt_string(t, key, where);
    if (!v) throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " is required");
    return *v;
}

inline std::optional<double> opt_number(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    if (node->is_floating_point() || node->is_integer()) return node->value<double>();
    throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be a number");
}

inline double req_number(const toml::table& t, std::string_view key, std::string_view where) {
    auto v = opt_number(t, key, where);
    if (!v) throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " is required");
    return *v;
}

inline std::optional<long long> opt_int(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    if (node->is_integer()) return node->value<long long>();
    throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be an integer");
}

inline std::optional<bool> opt_bool(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    if (node->is_boolean()) return node->value<bool>();
    throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be a boolean");
}

template <class T>
std::optional<std::vector<T>> opt_array(const toml::table& t, std::string_view key, std::string_view where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    const auto* arr = node->as_array();
    auto fail = [&] {
        throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " has the wrong element type");
    };
    if (!arr) fail();
    std::vector<T> out;
    for (const auto& el : *arr) {
        if constexpr (std::is_same_v<T, double>) {
            if (!el.is_floating_point() && !el.is_integer()) fail();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!el.is_string()) fail();
        } else {
            if (!el.is_integer()) fail();
        }
        out.push_back(*el.value<T>());
    }
    return out;
}

/// Tables of an array-of-tables key; empty when absent.
inline std::vector<const toml::table*> tables(const toml::table& t, std::string_view key, std::string_view where) {
    std::vector<const toml::table*> out;
    const auto* node = t.get(key);
    if (!node) return out;
    const auto* arr = node->as_array();
    if (!arr || !arr->is_array_of_tables()) {
        throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " must be an array of tables");
    }
    for (const auto& el : *arr) out.push_back(el.as_table());
    return out;
}

}  // namespace cascade::tomlu
