#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "solarpi/model.hpp"

namespace solarpi {

/// Versioned plain-text checkpoint: hexfloat values under shape headers, so
/// save -> load round-trips bit-exactly and files stay diffable. The run
/// configuration (one JSON line) and the training-split R_Q travel with the
/// tensors.
namespace checkpoint {

inline constexpr const char* kMagic = "solarpointpi-checkpoint";
inline constexpr int kVersion = 1;

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    out << "tensor " << name << ' ' << t.rank();
    for (int64_t d : t.shape) out << ' ' << d;
    out << '\n';
    char buf[40];
    for (int64_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%a", t[i]);
        out << buf << (i + 1 == t.size() ? '\n' : ' ');
    }
    if (t.size() == 0) out << '\n';
}

inline Tensor read_tensor(std::istream& in, std::string& name) {
    std::string tag;
    if (!(in >> tag) || tag != "tensor")
        throw std::runtime_error("checkpoint: expected tensor record, got '" + tag + "'");
    int64_t rank = 0;
    in >> name >> rank;
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    for (auto& d : shape) in >> d;
    Tensor t(shape);
    std::string tok;
    for (int64_t i = 0; i < t.size(); ++i) {
        if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated tensor " + name);
        t[i] = std::strtod(tok.c_str(), nullptr);
    }
    return t;
}

}  // namespace detail

inline void save(std::ostream& out, const model::Model& m, const std::string& config_json,
                 double r_q) {
    out << kMagic << " v" << kVersion << '\n';
    out << "config " << config_json << '\n';
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%a", r_q);
    out << "r_q " << buf << '\n';
    out << "params " << m.params().count() << '\n';
    for (const auto& e : m.params().entries()) detail::write_tensor(out, e.name, e.tensor);
    out << "buffers " << m.bn_buffers().size() * 2 << '\n';
    for (size_t i = 0; i < m.bn_buffers().size(); ++i) {
        detail::write_tensor(out, m.bn_names()[i] + ".running_mean",
                             m.bn_buffers()[i].running_mean);
        detail::write_tensor(out, m.bn_names()[i] + ".running_var",
                             m.bn_buffers()[i].running_var);
    }
}

inline void save(const std::string& path, const model::Model& m, const std::string& config_json,
                 double r_q) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    save(out, m, config_json, r_q);
}

struct Loaded {
    std::string config_json;
    double r_q = 1.0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> buffers;
};

inline Loaded load_raw(std::istream& in) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != kMagic || version != "v1")
        throw std::runtime_error("not a v1 checkpoint (bad header '" + magic + " " + version +
                                 "')");
    std::string tag;
    in >> tag;
    if (tag != "config") throw std::runtime_error("checkpoint: missing config record");
    in.ignore(1);
    Loaded out;
    std::getline(in, out.config_json);
    std::string tok;
    in >> tag >> tok;
    if (tag != "r_q") throw std::runtime_error("checkpoint: missing r_q record");
    out.r_q = std::strtod(tok.c_str(), nullptr);
    size_t n_params = 0;
    in >> tag >> n_params;
    if (tag != "params") throw std::runtime_error("checkpoint: missing params record");
    for (size_t i = 0; i < n_params; ++i) {
        std::string name;
        Tensor t = detail::read_tensor(in, name);
        out.params.emplace_back(std::move(name), std::move(t));
    }
    size_t n_buffers = 0;
    in >> tag >> n_buffers;
    if (tag != "buffers") throw std::runtime_error("checkpoint: missing buffers record");
    for (size_t i = 0; i < n_buffers; ++i) {
        std::string name;
        Tensor t = detail::read_tensor(in, name);
        out.buffers.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

/// Applies a loaded checkpoint onto a model built from the same config.
inline void restore_into(model::Model& m, const Loaded& ck) {
    if (ck.params.size() != m.params().count())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (const auto& [name, t] : ck.params) {
        Tensor& dst = m.params().at(name);
        if (!dst.same_shape(t))
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        dst = t;
    }
    for (const auto& [name, t] : ck.buffers) {
        bool found = false;
        for (size_t i = 0; i < m.bn_names().size(); ++i) {
            if (name == m.bn_names()[i] + ".running_mean") {
                m.bn_buffers()[i].running_mean = t;
                found = true;
            } else if (name == m.bn_names()[i] + ".running_var") {
                m.bn_buffers()[i].running_var = t;
                found = true;
            }
            if (found) break;
        }
        if (!found) throw std::runtime_error("checkpoint: unknown buffer " + name);
    }
}

inline Loaded load_raw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return load_raw(in);
}

}  // namespace checkpoint
}  // namespace solarpi
