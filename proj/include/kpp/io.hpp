#pragma once

// Bit-stable serialization: every float is emitted with 17 significant
// digits (round-trips doubles exactly), CSV cells are RFC-quoted when they
// need it, and report JSON has a fixed key order so reruns are
// byte-identical.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpp/analysis.hpp"
#include "kpp/cbbm.hpp"
#include "kpp/measure.hpp"
#include "kpp/skeleton.hpp"
#include "kpp/spde.hpp"

namespace kpp {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --------------------------- measure literal ------------------------------

inline std::string measure_to_json(const ReproductionMeasure& R) {
    std::ostringstream os;
    os << "{\"r0\": " << fmt17(R.atom_at_zero()) << ", \"atoms\": [";
    for (std::size_t i = 0; i < R.atoms().size(); ++i) {
        if (i) os << ", ";
        os << "[" << fmt17(R.atoms()[i].y) << ", " << fmt17(R.atoms()[i].w) << "]";
    }
    os << "]}";
    return os.str();
}

inline ReproductionMeasure measure_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("measure literal: expected an object");
    double r0 = 0.0;
    std::vector<Atom> atoms;
    if (j.contains("r0")) {
        if (!j["r0"].is_number()) throw std::invalid_argument("measure literal: r0 must be a number");
        r0 = j["r0"].get<double>();
    }
    if (j.contains("atoms")) {
        if (!j["atoms"].is_array())
            throw std::invalid_argument("measure literal: atoms must be an array of [y, w]");
        for (const auto& a : j["atoms"]) {
            if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
                throw std::invalid_argument("measure literal: each atom must be [y, w]");
            atoms.push_back(Atom{a[0].get<double>(), a[1].get<double>()});
        }
    }
    return ReproductionMeasure(r0, std::move(atoms));
}

inline ReproductionMeasure parse_measure_literal(const std::string& text) {
    return measure_from_json(nlohmann::json::parse(text));
}

// --------------------------------- CSV ------------------------------------

inline std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : os_(path) {
        if (!os_) throw std::runtime_error("cannot open " + path);
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << csv_cell(cells[i]);
        }
        os_ << '\n';
    }

  private:
    std::ofstream os_;
};

inline void write_skeleton_csv(const std::string& path, const Skeleton& s) {
    CsvWriter w(path);
    w.row({"t", "y"});
    for (const SkeletonPoint& p : s.points) w.row({fmt17(p.t), fmt17(p.y)});
}

inline void write_front_series_csv(const std::string& path,
                                   const std::vector<FrontSample>& series) {
    CsvWriter w(path);
    w.row({"t", "front_position", "mass", "front_q25", "front_q50", "front_q75"});
    for (const FrontSample& s : series)
        w.row({fmt17(s.t), fmt17(s.front), fmt17(s.mass), fmt17(s.front_q25), fmt17(s.front_q50),
               fmt17(s.front_q75)});
}

inline void write_spde_events_csv(const std::string& path, const std::vector<SpdeEvent>& ev) {
    CsvWriter w(path);
    w.row({"t", "y", "source"});
    for (const SpdeEvent& e : ev)
        w.row({fmt17(e.t), fmt17(e.y), e.from_skeleton ? "skeleton" : "small"});
}

inline void write_field_csv(const std::string& path, const Field& f) {
    CsvWriter w(path);
    w.row({"x", "u"});
    for (std::size_t i = 0; i < f.size(); ++i) w.row({fmt17(f.x(i)), fmt17(f.values[i])});
}

inline void write_cbbm_samples_csv(const std::string& path,
                                   const std::vector<CountSample>& samples) {
    CsvWriter w(path);
    w.row({"t", "I", "S"});
    for (const CountSample& s : samples)
        w.row({fmt17(s.t), fmt17(s.count),
               std::isnan(s.rightmost) ? std::string() : fmt17(s.rightmost)});
}

inline void write_positions_csv(const std::string& path,
                                const std::vector<std::pair<double, std::vector<double>>>& snaps) {
    CsvWriter w(path);
    w.row({"t", "x"});
    for (const auto& [t, xs] : snaps)
        for (double x : xs) w.row({fmt17(t), fmt17(x)});
}

// ------------------------------ report JSON -------------------------------

namespace detail {

class JsonObj {
  public:
    void field(const std::string& k, const std::string& raw_value) {
        if (!first_) os_ << ", ";
        first_ = false;
        os_ << '"' << k << "\": " << raw_value;
    }
    void num(const std::string& k, double v) { field(k, fmt17(v)); }
    void integer(const std::string& k, long long v) { field(k, std::to_string(v)); }
    void boolean(const std::string& k, bool v) { field(k, v ? "true" : "false"); }
    void str(const std::string& k, const std::string& v) {
        std::string esc;
        for (char c : v) {
            if (c == '"' || c == '\\') esc += '\\';
            esc += c;
        }
        field(k, "\"" + esc + "\"");
    }
    std::string done() const { return "{" + os_.str() + "}"; }

  private:
    std::ostringstream os_;
    bool first_ = true;
};

}  // namespace detail

inline std::string to_json(const RateReport& r) {
    detail::JsonObj o;
    o.num("estimate", r.estimate);
    o.num("stderr", r.stderr_of_fit);
    o.num("t_lo", r.t_lo);
    o.num("t_hi", r.t_hi);
    o.num("target", r.target);
    o.str("target_name", r.target_name);
    o.num("rel_tolerance", r.rel_tolerance);
    o.boolean("pass", r.pass);
    return o.done();
}

inline std::string to_json(const SpeedReport& r) {
    detail::JsonObj o;
    o.num("speed", r.speed);
    o.num("stderr", r.stderr_of_fit);
    o.num("front_level", r.front_level);
    o.num("target_speed", r.target_speed);
    o.num("annealed_speed", r.annealed_speed);
    std::ostringstream levels;
    levels << "[";
    for (std::size_t i = 0; i < r.speed_by_level.size(); ++i) {
        if (i) levels << ", ";
        levels << "[" << fmt17(r.speed_by_level[i].first) << ", "
               << fmt17(r.speed_by_level[i].second) << "]";
    }
    levels << "]";
    o.field("speed_by_level", levels.str());
    o.boolean("level_stable", r.level_stable);
    o.num("rel_tolerance", r.rel_tolerance);
    o.boolean("pass", r.pass);
    return o.done();
}

inline std::string to_json(const DualityReport& r) {
    detail::JsonObj o;
    o.num("lhs_mean", r.lhs_mean);
    o.num("lhs_stderr", r.lhs_stderr);
    o.num("rhs_mean", r.rhs_mean);
    o.num("rhs_stderr", r.rhs_stderr);
    o.num("combined_stderr", r.combined_stderr);
    o.num("abs_diff", r.abs_diff);
    o.num("sigmas", r.sigmas);
    o.integer("n_spde", static_cast<long long>(r.n_spde));
    o.integer("n_spde_effective", static_cast<long long>(r.n_spde_effective));
    o.integer("n_cbbm", static_cast<long long>(r.n_cbbm));
    o.integer("skeleton_events", static_cast<long long>(r.skeleton_events));
    o.boolean("pass", r.pass);
    return o.done();
}

inline std::string to_json(const TailCurve& c) {
    std::ostringstream os;
    os << "{\"lambda\": " << fmt17(c.lambda) << ", \"t\": [";
    for (std::size_t i = 0; i < c.t.size(); ++i) os << (i ? ", " : "") << fmt17(c.t[i]);
    os << "], \"p_hat\": [";
    for (std::size_t i = 0; i < c.p_hat.size(); ++i) os << (i ? ", " : "") << fmt17(c.p_hat[i]);
    os << "], \"bound\": [";
    for (std::size_t i = 0; i < c.bound.size(); ++i) os << (i ? ", " : "") << fmt17(c.bound[i]);
    os << "]}";
    return os.str();
}

inline std::string to_json(const TailSeedReport& r) {
    detail::JsonObj o;
    o.field("upper", to_json(r.upper));
    o.field("lower", to_json(r.lower));
    o.boolean("upper_monotone", r.upper_monotone);
    o.boolean("lower_monotone", r.lower_monotone);
    o.boolean("bound_respected", r.bound_respected);
    o.num("prune_mass", r.prune_mass);
    return o.done();
}

inline std::string to_json(const MartingaleReport& r) {
    std::ostringstream os;
    os << "{\"rows\": [";
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const MartingaleRow& row = r.rows[i];
        if (i) os << ", ";
        detail::JsonObj o;
        o.integer("n", static_cast<long long>(row.n));
        o.num("mean", row.mean);
        o.num("stderr", row.stderr_of_mean);
        o.num("sigmas", row.sigmas);
        o.boolean("pass", row.pass);
        os << o.done();
    }
    os << "], \"vacuous\": " << (r.vacuous ? "true" : "false")
       << ", \"pass\": " << (r.pass ? "true" : "false") << "}";
    return os.str();
}

inline std::string to_json(const LlnReport& r) {
    detail::JsonObj o;
    o.num("target", r.target);
    o.num("rel_tolerance", r.rel_tolerance);
    o.integer("n_seeds", static_cast<long long>(r.ratios.size()));
    o.integer("n_within", static_cast<long long>(r.n_within));
    o.num("required_fraction", r.required_fraction);
    o.boolean("flagged_empty", r.flagged_empty);
    o.boolean("pass", r.pass);
    return o.done();
}

inline std::string to_json(const AnnealedGrowthReport& r) {
    detail::JsonObj o;
    o.num("mean", r.mean);
    o.num("stderr", r.stderr_of_mean);
    o.num("target", r.target);
    o.num("sigmas", r.sigmas);
    o.integer("n", static_cast<long long>(r.n));
    o.boolean("pass", r.pass);
    return o.done();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << text;
    if (!text.empty() && text.back() != '\n') os << '\n';
}

}  // namespace kpp
