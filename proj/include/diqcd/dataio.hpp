#pragma once

// CSV datasets, run manifests, and statistics export.
//
// Dataset files: '#'-prefixed comment lines, one header row of
// [A-Za-z0-9_]+ column names (first column t_<unit>), then numeric rows at
// 12 significant digits, LF line endings. The loader accepts exactly the
// grammar the writer produces and reports failures with line numbers.
//
// Manifests: flat key=value lines closed by a FNV-1a content hash. The
// wall_clock entry is excluded from the hash so reruns of the same
// configuration agree on it.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "diqcd/grad.hpp"

namespace diqcd::dataio {

inline std::string format_g(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}
inline std::string format_g12(double v) { return format_g(v, 12); }
inline std::string format_g17(double v) { return format_g(v, 17); }

inline void atomic_write(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot open " + tmp + " for writing");
        f.write(text.data(), std::streamsize(text.size()));
        f.flush();
        if (!f) throw ConfigError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ConfigError("cannot move " + tmp + " into place");
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

namespace detail {

inline bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
            return false;
    return true;
}

inline double parse_field(const std::string& field, const std::string& path,
                          int line) {
    double v = 0.0;
    const char* b = field.data();
    const char* e = b + field.size();
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw ConfigError(path + ":" + std::to_string(line) +
                          ": malformed number '" + field + "'");
    if (!std::isfinite(v))
        throw ConfigError(path + ":" + std::to_string(line) +
                          ": non-finite value '" + field + "'");
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

struct Csv {
    std::vector<std::string> comments;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline std::string csv_text(const Csv& c) {
    std::string out;
    for (const std::string& s : c.comments) out += "# " + s + "\n";
    for (size_t i = 0; i < c.columns.size(); ++i) {
        if (!valid_name(c.columns[i]))
            throw ConfigError("invalid column name '" + c.columns[i] + "'");
        out += (i ? "," : "") + c.columns[i];
    }
    out += "\n";
    for (const auto& row : c.rows) {
        if (row.size() != c.columns.size())
            throw ConfigError("row width does not match the header");
        for (size_t i = 0; i < row.size(); ++i) {
            if (!std::isfinite(row[i]))
                throw ConfigError("refusing to write a non-finite value");
            out += (i ? "," : "") + format_g12(row[i]);
        }
        out += "\n";
    }
    return out;
}

inline Csv parse_csv(const std::string& text, const std::string& path) {
    Csv c;
    int line_no = 0;
    size_t pos = 0;
    bool have_header = false;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.empty()) {
            if (pos < text.size() || !have_header)
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": blank line");
            continue;
        }
        if (line[0] == '#') {
            if (have_header)
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": comment after the header");
            c.comments.push_back(line.size() > 1 && line[1] == ' '
                                     ? line.substr(2)
                                     : line.substr(1));
            continue;
        }
        const std::vector<std::string> fields = split_csv(line);
        if (!have_header) {
            for (size_t i = 0; i < fields.size(); ++i) {
                if (!valid_name(fields[i]))
                    throw ConfigError(path + ":" + std::to_string(line_no) +
                                      ": invalid column name '" + fields[i] +
                                      "'");
                for (size_t j = 0; j < i; ++j)
                    if (fields[j] == fields[i])
                        throw ConfigError(path + ":" + std::to_string(line_no) +
                                          ": duplicate column '" + fields[i] +
                                          "'");
            }
            c.columns = fields;
            have_header = true;
            continue;
        }
        if (fields.size() != c.columns.size())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(c.columns.size()) + " fields, got " +
                              std::to_string(fields.size()));
        std::vector<double> row;
        row.reserve(fields.size());
        for (const std::string& f : fields)
            row.push_back(parse_field(f, path, line_no));
        c.rows.push_back(std::move(row));
    }
    if (!have_header)
        throw ConfigError(path + ":1: empty file, expected a header row");
    return c;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dataset: first column is the time axis, named t_<unit>; any column named
// *_std holds a spread and must be nonnegative.

struct Dataset {
    std::vector<std::string> comments;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int col(const std::string& name) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return int(i);
        throw ConfigError("dataset has no column '" + name + "'");
    }
    std::vector<double> values(int c) const {
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r.at(size_t(c)));
        return v;
    }
    std::vector<double> values(const std::string& name) const {
        return values(col(name));
    }
};

inline std::string time_unit(const Dataset& ds) {
    if (ds.columns.empty() || ds.columns[0].rfind("t_", 0) != 0)
        throw ConfigError("dataset time column must be named t_<unit>");
    return ds.columns[0].substr(2);
}

inline void validate_dataset(const Dataset& ds, const std::string& path) {
    time_unit(ds);
    if (ds.rows.empty()) throw ConfigError(path + ": dataset has no rows");
    double prev = -std::numeric_limits<double>::infinity();
    for (size_t r = 0; r < ds.rows.size(); ++r) {
        const auto& row = ds.rows[r];
        if (row.size() != ds.columns.size())
            throw ConfigError(path + ": ragged dataset row");
        if (row[0] <= prev)
            throw ConfigError(path + ": times not strictly increasing at row " +
                              std::to_string(r + 1));
        prev = row[0];
        for (size_t c = 1; c < row.size(); ++c)
            if (row[c] < 0.0 && ds.columns[c].size() > 4 &&
                ds.columns[c].substr(ds.columns[c].size() - 4) == "_std")
                throw ConfigError(path + ": negative spread in column '" +
                                  ds.columns[c] + "'");
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    validate_dataset(ds, path);
    detail::Csv c{ds.comments, ds.columns, ds.rows};
    atomic_write(path, detail::csv_text(c));
}

// expected_unit: required time unit ("ms", "fs"); expected_columns, when
// nonempty, pins the exact value-column layout.
inline Dataset load_dataset(const std::string& path,
                            const std::string& expected_unit,
                            const std::vector<std::string>& expected_columns = {}) {
    const detail::Csv c = detail::parse_csv(read_file(path), path);
    Dataset ds{c.comments, c.columns, c.rows};
    validate_dataset(ds, path);
    if (!expected_unit.empty() && time_unit(ds) != expected_unit)
        throw ConfigError(path + ": time unit '" + time_unit(ds) +
                          "' does not match the required '" + expected_unit +
                          "'");
    if (!expected_columns.empty()) {
        if (ds.columns.size() != expected_columns.size() + 1)
            throw ConfigError(path + ": expected " +
                              std::to_string(expected_columns.size()) +
                              " value columns");
        for (size_t i = 0; i < expected_columns.size(); ++i)
            if (ds.columns[i + 1] != expected_columns[i])
                throw ConfigError(path + ": missing column '" +
                                  expected_columns[i] + "' (found '" +
                                  ds.columns[i + 1] + "')");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Run manifest.

struct RunManifest {
    std::vector<std::pair<std::string, std::string>> entries;

    void set(const std::string& key, const std::string& value) {
        if (!detail::valid_name(key) && key.find('.') == std::string::npos)
            throw ConfigError("invalid manifest key '" + key + "'");
        if (value.find('\n') != std::string::npos)
            throw ConfigError("manifest value must be a single line");
        for (auto& kv : entries)
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        entries.emplace_back(key, value);
    }
    void set(const std::string& key, const char* value) {
        set(key, std::string(value));
    }
    void set(const std::string& key, double value) {
        set(key, format_g17(value));
    }
    void set(const std::string& key, std::uint64_t value) {
        set(key, std::to_string(value));
    }
    void set(const std::string& key, int value) {
        set(key, std::to_string(value));
    }

    bool has(const std::string& key) const {
        for (const auto& kv : entries)
            if (kv.first == key) return true;
        return false;
    }
    const std::string& get(const std::string& key) const {
        for (const auto& kv : entries)
            if (kv.first == key) return kv.second;
        throw ConfigError("manifest is missing key '" + key + "'");
    }
    double get_double(const std::string& key) const {
        return detail::parse_field(get(key), "manifest[" + key + "]", 0);
    }
    std::uint64_t get_u64(const std::string& key) const {
        const std::string& s = get(key);
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("manifest key '" + key + "' is not an integer");
        return v;
    }

    // Content hash over every entry except wall_clock, in insertion order.
    std::uint64_t hash() const {
        std::uint64_t h = 14695981039346656037ULL;
        auto eat = [&h](const std::string& s) {
            for (char c : s) {
                h ^= std::uint64_t(static_cast<unsigned char>(c));
                h *= 1099511628211ULL;
            }
        };
        for (const auto& kv : entries) {
            if (kv.first == "wall_clock") continue;
            eat(kv.first);
            eat("=");
            eat(kv.second);
            eat("\n");
        }
        return h;
    }
    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(hash()));
        return buf;
    }

    std::string text() const {
        std::string out;
        for (const auto& kv : entries) out += kv.first + "=" + kv.second + "\n";
        out += "hash=" + hash_hex() + "\n";
        return out;
    }
    void save(const std::string& path) const { atomic_write(path, text()); }

    static RunManifest parse(const std::string& text, const std::string& path) {
        RunManifest m;
        std::string stored_hash;
        int line_no = 0;
        size_t pos = 0;
        while (pos < text.size()) {
            size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            const std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": expected key=value");
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (key == "hash")
                stored_hash = value;
            else
                m.entries.emplace_back(key, value);
        }
        if (stored_hash.empty())
            throw ConfigError(path + ": manifest has no hash line");
        if (stored_hash != m.hash_hex())
            throw ConfigError(path + ": manifest hash mismatch (edited file?)");
        return m;
    }
    static RunManifest load(const std::string& path) {
        return parse(read_file(path), path);
    }
};

// Store every parameter twice: a readable external value and the exact
// internal representation used to restore the store bit-identically.
inline void snapshot_params(RunManifest& m, const ParamStore& store) {
    m.set("n_params", int(store.size()));
    for (int i = 0; i < store.size(); ++i) {
        const Param& p = store.at(i);
        m.set("param." + p.name, store.value(i));
        m.set("internal." + p.name, format_g17(p.internal));
    }
}

inline void restore_params(const RunManifest& m, ParamStore& store) {
    for (int i = 0; i < store.size(); ++i) {
        const Param& p = store.at(i);
        if (!m.has("internal." + p.name))
            throw ConfigError("manifest has no snapshot of parameter '" +
                              p.name + "'");
        store.set_internal(i, m.get_double("internal." + p.name));
    }
}

inline void snapshot_adam(RunManifest& m, const ParamStore& store,
                          const AdamState& st) {
    m.set("adam.t", st.t);
    for (int i = 0; i < store.size(); ++i) {
        const std::string& n = store.at(i).name;
        m.set("adam_m." + n, format_g17(st.m.at(size_t(i))));
        m.set("adam_v." + n, format_g17(st.v.at(size_t(i))));
    }
}

inline AdamState restore_adam(const RunManifest& m, const ParamStore& store) {
    AdamState st;
    st.t = int(m.get_u64("adam.t"));
    for (int i = 0; i < store.size(); ++i) {
        const std::string& n = store.at(i).name;
        st.m.push_back(m.get_double("adam_m." + n));
        st.v.push_back(m.get_double("adam_v." + n));
    }
    return st;
}

// ---------------------------------------------------------------------------
// Statistics and training-history export.

inline Dataset stats_dataset(const TrajectoryStats& st,
                             const std::string& time_col,
                             bool include_loss) {
    Dataset ds;
    ds.columns.push_back(time_col);
    for (const std::string& name : st.names) {
        ds.columns.push_back(name + "_mean");
        ds.columns.push_back(name + "_std");
    }
    if (include_loss) ds.columns.push_back("lost_fraction");
    for (size_t t = 0; t < st.times.size(); ++t) {
        std::vector<double> row;
        row.push_back(st.times[t]);
        for (size_t o = 0; o < st.names.size(); ++o) {
            row.push_back(st.mean[o][t]);
            row.push_back(st.stddev[o][t]);
        }
        if (include_loss) row.push_back(st.lost_fraction[t]);
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

inline void export_stats(const TrajectoryStats& st, const std::string& path,
                         const std::string& time_col,
                         const std::string& manifest_hash,
                         bool include_loss = false) {
    Dataset ds = stats_dataset(st, time_col, include_loss);
    ds.comments.push_back("manifest_hash=" + manifest_hash);
    save_dataset(ds, path);
}

inline void save_loss_history(const std::vector<double>& loss,
                              const std::string& path,
                              const std::string& manifest_hash) {
    detail::Csv c;
    c.comments.push_back("manifest_hash=" + manifest_hash);
    c.columns = {"epoch", "loss"};
    for (size_t e = 0; e < loss.size(); ++e)
        c.rows.push_back({double(e), loss[e]});
    atomic_write(path, detail::csv_text(c));
}

} // namespace diqcd::dataio
