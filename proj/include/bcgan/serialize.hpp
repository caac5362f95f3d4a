#pragma once

// JSON checkpoint helpers. Doubles are stored as C99 hexfloat strings so
// save/load round-trips are bit-exact.

#include <bcgan/tensor.hpp>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>

namespace bcgan {

using json = nlohmann::json;

inline std::string double_to_hex(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return std::string(buf);
}

inline double hex_to_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw std::runtime_error("hex_to_double: unparseable value '" + s + "'");
    return v;
}

inline json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape;
    json vals = json::array();
    for (double v : t.values) vals.push_back(double_to_hex(v));
    j["values"] = std::move(vals);
    return j;
}

inline Tensor tensor_from_json(const json& j) {
    Tensor t;
    t.shape = j.at("shape").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("values")) t.values.push_back(hex_to_double(s.get<std::string>()));
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    if (t.shape.empty() || n != t.values.size())
        throw std::runtime_error("tensor_from_json: shape/value mismatch");
    return t;
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(1) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return json::parse(in);
}

inline void require_format(const json& j, const std::string& tag) {
    if (!j.contains("format") || j.at("format").get<std::string>() != tag)
        throw std::runtime_error("unexpected file format; wanted '" + tag + "'");
}

} // namespace bcgan
