#pragma once

// Dataset generation, CSV ingestion and preprocessing. Discrete columns are
// one-hot encoded; continuous columns are min-max scaled to [0,1] with the
// statistics of the fitting split, and later splits are transformed with those
// frozen statistics and clipped.

#include <bcgan/rng.hpp>
#include <bcgan/serialize.hpp>
#include <bcgan/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcgan {

struct SchemaColumn {
    enum class Kind { continuous, one_hot };

    std::string name;
    Kind kind = Kind::continuous;
    double min = 0.0, max = 1.0;          // continuous
    std::vector<std::string> categories;  // one_hot, in first-appearance order
    std::size_t first_col = 0;            // position in the processed matrix
    std::size_t width = 1;
};

struct Schema {
    std::vector<SchemaColumn> columns;
    std::string label_name = "label";
    std::vector<std::string> class_names;

    std::size_t feature_width() const {
        std::size_t w = 0;
        for (const auto& c : columns) w += c.width;
        return w;
    }

    std::size_t n_classes() const { return class_names.size(); }

    /// Identity schema for data already living in [0,1]^d.
    static Schema identity(std::size_t d, std::size_t n_classes) {
        Schema s;
        for (std::size_t i = 0; i < d; ++i) {
            SchemaColumn c;
            c.name = "x" + std::to_string(i);
            c.min = 0.0;
            c.max = 1.0;
            c.first_col = i;
            s.columns.push_back(std::move(c));
        }
        for (std::size_t k = 0; k < n_classes; ++k) s.class_names.push_back(std::to_string(k));
        return s;
    }
};

struct Dataset {
    Tensor features; // n x d, entries in [0,1]
    std::vector<int> labels;
    Schema schema;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.cols(); }
    std::size_t n_classes() const {
        if (!schema.class_names.empty()) return schema.class_names.size();
        int mx = -1;
        for (int l : labels) mx = std::max(mx, l);
        return static_cast<std::size_t>(mx + 1);
    }

    void validate() const {
        if (features.rows() != labels.size())
            throw std::invalid_argument("Dataset: row/label count mismatch");
        const int k = static_cast<int>(n_classes());
        for (int l : labels)
            if (l < 0 || l >= k) throw std::invalid_argument("Dataset: label out of range");
    }
};

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.schema = d.schema;
    out.features = Tensor::zeros(rows.size(), d.feature_dim());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < d.feature_dim(); ++c)
            out.features.at(i, c) = d.features.at(rows[i], c);
        out.labels.push_back(d.labels[rows[i]]);
    }
    return out;
}

// ---- class prior ---------------------------------------------------------------

struct ClassPrior {
    std::vector<double> probabilities;

    void validate() const {
        double s = 0.0;
        for (double p : probabilities) {
            if (p < 0.0) throw std::invalid_argument("ClassPrior: negative probability");
            s += p;
        }
        if (std::fabs(s - 1.0) > 1e-12) throw std::invalid_argument("ClassPrior: does not sum to 1");
    }
};

inline ClassPrior class_prior(const Dataset& d) {
    if (d.size() == 0) throw std::invalid_argument("class_prior: empty dataset");
    ClassPrior p;
    p.probabilities.assign(d.n_classes(), 0.0);
    for (int l : d.labels) p.probabilities[static_cast<std::size_t>(l)] += 1.0;
    for (double& v : p.probabilities) v /= static_cast<double>(d.size());
    return p;
}

// ---- toy generators --------------------------------------------------------------

enum class ToyKind { two_gaussians, two_moons };

inline ToyKind toy_kind_from_name(const std::string& s) {
    if (s == "two_gaussians") return ToyKind::two_gaussians;
    if (s == "two_moons") return ToyKind::two_moons;
    throw std::invalid_argument("unknown toy dataset kind '" + s + "'");
}

/// Balanced two-class 2D data in the unit square. two_gaussians puts class
/// means at (0.35, 0.5) and (0.65, 0.5) with isotropic std = noise.
inline Dataset toy2d_generate(ToyKind kind, std::size_t n, double noise, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("toy2d_generate: n must be >= 2");
    if (noise < 0.0) throw std::invalid_argument("toy2d_generate: noise must be >= 0");
    Rng rng(seed);
    Dataset d;
    d.schema = Schema::identity(2, 2);
    d.features = Tensor::zeros(n, 2);
    d.labels.resize(n);
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        d.labels[i] = y;
        double px = 0.0, py = 0.0;
        if (kind == ToyKind::two_gaussians) {
            px = (y == 0 ? 0.35 : 0.65) + rng.normal(0.0, noise);
            py = 0.5 + rng.normal(0.0, noise);
        } else {
            // interleaved half-moons scaled into the unit square
            const double t = rng.uniform01() * 3.14159265358979323846;
            const double cx = std::cos(t), cy = std::sin(t);
            if (y == 0) {
                px = 0.5 + 0.35 * cx;
                py = 0.35 + 0.35 * cy;
            } else {
                px = 0.5 - 0.35 * cx + 0.175;
                py = 0.65 - 0.35 * cy - 0.175;
            }
            px += rng.normal(0.0, noise);
            py += rng.normal(0.0, noise);
        }
        d.features.at(i, 0) = clamp01(px);
        d.features.at(i, 1) = clamp01(py);
    }
    return d;
}

/// Balanced k-class mixture of isotropic Gaussians on a circle in the unit
/// square (used by the 3-class projection experiment).
inline Dataset gaussian_mixture_2d(std::size_t n_classes, std::size_t n, double noise,
                                   std::uint64_t seed) {
    if (n_classes < 2) throw std::invalid_argument("gaussian_mixture_2d: need >= 2 classes");
    Rng rng(seed);
    Dataset d;
    d.schema = Schema::identity(2, n_classes);
    d.features = Tensor::zeros(n, 2);
    d.labels.resize(n);
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % n_classes);
        const double angle = 2.0 * 3.14159265358979323846 * y / static_cast<double>(n_classes);
        d.labels[i] = y;
        d.features.at(i, 0) = clamp01(0.5 + 0.22 * std::cos(angle) + rng.normal(0.0, noise));
        d.features.at(i, 1) = clamp01(0.5 + 0.22 * std::sin(angle) + rng.normal(0.0, noise));
    }
    return d;
}

// ---- splits -----------------------------------------------------------------------

/// Disjoint random halves covering every row; sizes floor(n/2) and ceil(n/2).
inline std::pair<Dataset, Dataset> split_half_random(const Dataset& d, std::uint64_t seed) {
    if (d.size() < 2) throw std::invalid_argument("split_half_random: need at least 2 rows");
    Rng rng(seed);
    const auto perm = rng.permutation(d.size());
    const std::size_t h = d.size() / 2;
    std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(h));
    std::vector<std::size_t> second(perm.begin() + static_cast<std::ptrdiff_t>(h), perm.end());
    return {subset(d, first), subset(d, second)};
}

// ---- CSV ingestion -----------------------------------------------------------------

struct ColumnDecl {
    enum class Kind { continuous, discrete, label };
    std::string name;
    Kind kind = Kind::continuous;
};

struct IngestSpec {
    std::vector<ColumnDecl> columns;

    const ColumnDecl* find(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_numeric(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("csv_ingest: unparseable numeric '" + s + "' in column '" + col +
                                 "', data row " + std::to_string(row));
    }
}

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline RawTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv_ingest: cannot open '" + path + "'");
    RawTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') continue; // comment / format tag
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw std::runtime_error("csv_ingest: row " + std::to_string(t.rows.size()) +
                                         " has " + std::to_string(cells.size()) + " cells, header has " +
                                         std::to_string(t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw std::runtime_error("csv_ingest: '" + path + "' is empty");
    return t;
}

} // namespace detail

/// Fits a schema on the file (min/max per continuous column, category lists in
/// first-appearance order) and returns the processed dataset.
inline Dataset csv_ingest_fit(const std::string& path, const IngestSpec& spec) {
    const auto table = detail::read_csv(path);
    std::ptrdiff_t label_idx = -1;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        const ColumnDecl* decl = spec.find(table.header[i]);
        if (!decl)
            throw std::runtime_error("csv_ingest: column '" + table.header[i] + "' not declared");
        if (decl->kind == ColumnDecl::Kind::label) label_idx = static_cast<std::ptrdiff_t>(i);
    }
    if (label_idx < 0) throw std::runtime_error("csv_ingest: no label column in header");

    Dataset d;
    d.schema.label_name = table.header[static_cast<std::size_t>(label_idx)];

    // First pass: fit statistics.
    std::vector<SchemaColumn> cols;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (static_cast<std::ptrdiff_t>(i) == label_idx) continue;
        const ColumnDecl* decl = spec.find(table.header[i]);
        SchemaColumn sc;
        sc.name = table.header[i];
        if (decl->kind == ColumnDecl::Kind::continuous) {
            sc.kind = SchemaColumn::Kind::continuous;
            double mn = std::numeric_limits<double>::infinity();
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < table.rows.size(); ++r) {
                const double v = detail::parse_numeric(table.rows[r][i], r, sc.name);
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            sc.min = mn;
            sc.max = mx;
            sc.width = 1;
        } else {
            sc.kind = SchemaColumn::Kind::one_hot;
            for (const auto& row : table.rows) {
                const std::string& cat = row[i];
                if (std::find(sc.categories.begin(), sc.categories.end(), cat) == sc.categories.end())
                    sc.categories.push_back(cat);
            }
            sc.width = sc.categories.size();
        }
        cols.push_back(std::move(sc));
    }
    std::size_t off = 0;
    for (auto& c : cols) {
        c.first_col = off;
        off += c.width;
    }
    d.schema.columns = std::move(cols);

    for (const auto& row : table.rows) {
        const std::string& cls = row[static_cast<std::size_t>(label_idx)];
        auto& names = d.schema.class_names;
        if (std::find(names.begin(), names.end(), cls) == names.end()) names.push_back(cls);
    }

    // Second pass: transform. Fitting split cannot see unknown categories.
    d.features = Tensor::zeros(table.rows.size(), d.schema.feature_width());
    d.labels.resize(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        std::size_t sc_idx = 0;
        for (std::size_t i = 0; i < table.header.size(); ++i) {
            if (static_cast<std::ptrdiff_t>(i) == label_idx) continue;
            const SchemaColumn& sc = d.schema.columns[sc_idx++];
            if (sc.kind == SchemaColumn::Kind::continuous) {
                const double v = detail::parse_numeric(table.rows[r][i], r, sc.name);
                const double range = sc.max - sc.min;
                d.features.at(r, sc.first_col) = range > 0.0 ? (v - sc.min) / range : 0.5;
            } else {
                const auto it = std::find(sc.categories.begin(), sc.categories.end(), table.rows[r][i]);
                d.features.at(r, sc.first_col + static_cast<std::size_t>(it - sc.categories.begin())) = 1.0;
            }
        }
        const auto& names = d.schema.class_names;
        const std::string& cls = table.rows[r][static_cast<std::size_t>(label_idx)];
        const auto it = std::find(names.begin(), names.end(), cls);
        d.labels[r] = static_cast<int>(it - names.begin());
    }
    d.validate();
    return d;
}

/// Transforms a file with an existing schema (frozen statistics). Continuous
/// values are clipped to [0,1]; unknown categories yield an all-zero one-hot
/// group and a warning on stderr.
inline Dataset csv_ingest_apply(const std::string& path, const Schema& schema) {
    const auto table = detail::read_csv(path);
    std::ptrdiff_t label_idx = -1;
    std::vector<std::ptrdiff_t> col_pos(schema.columns.size(), -1);
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (table.header[i] == schema.label_name) {
            label_idx = static_cast<std::ptrdiff_t>(i);
            continue;
        }
        for (std::size_t k = 0; k < schema.columns.size(); ++k)
            if (schema.columns[k].name == table.header[i]) col_pos[k] = static_cast<std::ptrdiff_t>(i);
    }
    if (label_idx < 0) throw std::runtime_error("csv_ingest: label column '" + schema.label_name + "' missing");
    for (std::size_t k = 0; k < schema.columns.size(); ++k)
        if (col_pos[k] < 0)
            throw std::runtime_error("csv_ingest: column '" + schema.columns[k].name + "' missing");

    Dataset d;
    d.schema = schema;
    d.features = Tensor::zeros(table.rows.size(), schema.feature_width());
    d.labels.resize(table.rows.size());
    std::size_t warned = 0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (std::size_t k = 0; k < schema.columns.size(); ++k) {
            const SchemaColumn& sc = schema.columns[k];
            const std::string& cell = table.rows[r][static_cast<std::size_t>(col_pos[k])];
            if (sc.kind == SchemaColumn::Kind::continuous) {
                const double v = detail::parse_numeric(cell, r, sc.name);
                const double range = sc.max - sc.min;
                double x = range > 0.0 ? (v - sc.min) / range : 0.5;
                d.features.at(r, sc.first_col) = std::min(1.0, std::max(0.0, x));
            } else {
                const auto it = std::find(sc.categories.begin(), sc.categories.end(), cell);
                if (it == sc.categories.end()) {
                    if (warned++ < 5)
                        std::cerr << "csv_ingest: unknown category '" << cell << "' in column '"
                                  << sc.name << "' (row " << r << "); emitting zero group\n";
                } else {
                    d.features.at(r, sc.first_col + static_cast<std::size_t>(it - sc.categories.begin())) = 1.0;
                }
            }
        }
        const std::string& cls = table.rows[r][static_cast<std::size_t>(label_idx)];
        const auto it = std::find(schema.class_names.begin(), schema.class_names.end(), cls);
        if (it == schema.class_names.end())
            throw std::runtime_error("csv_ingest: unknown class label '" + cls + "' at row " +
                                     std::to_string(r));
        d.labels[r] = static_cast<int>(it - schema.class_names.begin());
    }
    d.validate();
    return d;
}

// ---- hardening and export -----------------------------------------------------------

/// Argmax per one-hot group (ties to the lowest index); continuous columns
/// untouched.
inline Dataset harden_one_hot(const Dataset& d) {
    Dataset out = d;
    for (const auto& sc : d.schema.columns) {
        if (sc.kind != SchemaColumn::Kind::one_hot || sc.width == 0) continue;
        for (std::size_t r = 0; r < out.features.rows(); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < sc.width; ++c)
                if (out.features.at(r, sc.first_col + c) > out.features.at(r, sc.first_col + best))
                    best = c;
            for (std::size_t c = 0; c < sc.width; ++c)
                out.features.at(r, sc.first_col + c) = (c == best) ? 1.0 : 0.0;
        }
    }
    return out;
}

inline json schema_to_json(const Schema& s) {
    json cols = json::array();
    for (const auto& c : s.columns) {
        json jc;
        jc["name"] = c.name;
        jc["kind"] = c.kind == SchemaColumn::Kind::continuous ? "continuous" : "one_hot";
        if (c.kind == SchemaColumn::Kind::continuous) {
            jc["min"] = double_to_hex(c.min);
            jc["max"] = double_to_hex(c.max);
        } else {
            jc["categories"] = c.categories;
        }
        jc["first_col"] = c.first_col;
        jc["width"] = c.width;
        cols.push_back(std::move(jc));
    }
    return json{{"format", "bcgan.schema.v1"},
                {"label", {{"name", s.label_name}, {"classes", s.class_names}}},
                {"columns", std::move(cols)}};
}

inline Schema schema_from_json(const json& j) {
    require_format(j, "bcgan.schema.v1");
    Schema s;
    s.label_name = j.at("label").at("name").get<std::string>();
    s.class_names = j.at("label").at("classes").get<std::vector<std::string>>();
    for (const auto& jc : j.at("columns")) {
        SchemaColumn c;
        c.name = jc.at("name").get<std::string>();
        if (jc.at("kind") == "continuous") {
            c.kind = SchemaColumn::Kind::continuous;
            c.min = hex_to_double(jc.at("min").get<std::string>());
            c.max = hex_to_double(jc.at("max").get<std::string>());
        } else {
            c.kind = SchemaColumn::Kind::one_hot;
            c.categories = jc.at("categories").get<std::vector<std::string>>();
        }
        c.first_col = jc.at("first_col").get<std::size_t>();
        c.width = jc.at("width").get<std::size_t>();
        s.columns.push_back(std::move(c));
    }
    return s;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

} // namespace detail

/// Writes a header-bearing CSV in original units (continuous columns are
/// inverse-scaled, one-hot groups become their category string) plus a schema
/// sidecar. `harden` snaps soft one-hot groups to pure categories first; with
/// it off, ambiguous soft groups still export their argmax category.
inline void export_csv(const Dataset& d, const std::string& csv_path,
                       const std::string& schema_path, bool harden = true) {
    const Dataset out = harden ? harden_one_hot(d) : d;
    std::ofstream f(csv_path);
    if (!f) throw std::runtime_error("export_csv: cannot open '" + csv_path + "'");
    f << "# bcgan.dataset.v1\n";
    for (const auto& c : out.schema.columns) f << c.name << ",";
    f << out.schema.label_name << "\n";
    for (std::size_t r = 0; r < out.size(); ++r) {
        for (const auto& c : out.schema.columns) {
            if (c.kind == SchemaColumn::Kind::continuous) {
                const double x = out.features.at(r, c.first_col);
                f << detail::format_double(c.min + x * (c.max - c.min)) << ",";
            } else {
                std::size_t best = 0;
                for (std::size_t k = 1; k < c.width; ++k)
                    if (out.features.at(r, c.first_col + k) > out.features.at(r, c.first_col + best))
                        best = k;
                f << c.categories[best] << ",";
            }
        }
        f << out.schema.class_names[static_cast<std::size_t>(out.labels[r])] << "\n";
    }
    write_json_file(schema_path, schema_to_json(out.schema));
}

} // namespace bcgan
