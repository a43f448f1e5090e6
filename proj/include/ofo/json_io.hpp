#pragma once

/// @file
/// JSON (de)serialization for certificates, grid case files and signals.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ofo/certify.hpp"
#include "ofo/closed_loop.hpp"
#include "ofo/errors.hpp"
#include "ofo/powergrid.hpp"

namespace ofo {

using json = nlohmann::json;

inline json matrix_to_json(const MatrixXd& M) {
  json rows = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline VectorXd vector_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw DimensionError(std::string(what) + ": expected array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = j[i].get<double>();
  return v;
}

inline json vector_to_json(const VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline MatrixXd matrix_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw DimensionError(std::string(what) + ": expected row array");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  MatrixXd M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[i].size()) != cols) {
      throw DimensionError(std::string(what) + ": ragged rows");
    }
    for (Index k = 0; k < cols; ++k) M(i, k) = j[i][k].get<double>();
  }
  return M;
}

/// Keys A, B, Bw, C1, C2, D1w, D2w as nested row arrays. An empty output
/// block is written as []; its column count is implied by A.
inline json statespace_to_json(const StateSpace& s) {
  return {{"A", matrix_to_json(s.A())},     {"B", matrix_to_json(s.B())},
          {"Bw", matrix_to_json(s.Bw())},   {"C1", matrix_to_json(s.C1())},
          {"C2", matrix_to_json(s.C2())},   {"D1w", matrix_to_json(s.D1w())},
          {"D2w", matrix_to_json(s.D2w())}};
}

inline StateSpace statespace_from_json(const json& j) {
  try {
    const MatrixXd A = matrix_from_json(j.at("A"), "A");
    const MatrixXd B = matrix_from_json(j.at("B"), "B");
    const MatrixXd Bw = matrix_from_json(j.at("Bw"), "Bw");
    auto out_block = [&](const char* key, Index cols) {
      MatrixXd M = matrix_from_json(j.at(key), key);
      return M.rows() == 0 ? MatrixXd(0, cols) : M;
    };
    return StateSpace(A, B, Bw, out_block("C1", A.cols()), out_block("C2", A.cols()),
                      out_block("D1w", Bw.cols()), out_block("D2w", Bw.cols()));
  } catch (const json::exception& e) {
    throw DimensionError(std::string("StateSpace: ") + e.what());
  }
}

namespace detail {

inline json bound_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double bound_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DimensionError("bad bound '" + s + "'");
  }
  return j.get<double>();
}

inline json bounds_to_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(bound_to_json(v[i]));
  return a;
}

inline VectorXd bounds_from_json(const json& j) {
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = bound_from_json(j[i]);
  return v;
}

}  // namespace detail

/// {"kind": "quadratic" | "box" | "zero_set" | "soft_box" | "composite", ...}
inline json proxspec_to_json(const ProxSpec& spec) {
  return std::visit(
      detail::overloaded{
          [](const Quadratic& q) -> json {
            return {{"kind", "quadratic"}, {"H", matrix_to_json(q.H)}, {"c", vector_to_json(q.c)}};
          },
          [](const BoxIndicator& b) -> json {
            return {{"kind", "box"}, {"lo", detail::bounds_to_json(b.lo)},
                    {"hi", detail::bounds_to_json(b.hi)}};
          },
          [](const ZeroSetIndicator& z) -> json { return {{"kind", "zero_set"}, {"dim", z.dim}}; },
          [](const SoftBoxPenalty& s) -> json {
            return {{"kind", "soft_box"}, {"eta", s.eta}, {"lo", detail::bounds_to_json(s.lo)},
                    {"hi", detail::bounds_to_json(s.hi)}};
          },
          [](const Composite& c) -> json {
            json blocks = json::array();
            for (const auto& b : c.blocks) blocks.push_back(proxspec_to_json(b));
            return {{"kind", "composite"}, {"blocks", blocks}};
          }},
      spec.kind());
}

inline ProxSpec proxspec_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "quadratic") {
      return ProxSpec::quadratic(matrix_from_json(j.at("H"), "H"), vector_from_json(j.at("c"), "c"));
    }
    if (kind == "box") {
      return ProxSpec::box(detail::bounds_from_json(j.at("lo")), detail::bounds_from_json(j.at("hi")));
    }
    if (kind == "zero_set") return ProxSpec::zero_set(j.at("dim").get<Index>());
    if (kind == "soft_box") {
      return ProxSpec::soft_box(j.at("eta").get<double>(), detail::bounds_from_json(j.at("lo")),
                                detail::bounds_from_json(j.at("hi")));
    }
    if (kind == "composite") {
      std::vector<ProxSpec> blocks;
      for (const auto& b : j.at("blocks")) blocks.push_back(proxspec_from_json(b));
      return ProxSpec::composite(std::move(blocks));
    }
    throw DimensionError("ProxSpec: unknown kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw DimensionError(std::string("ProxSpec: ") + e.what());
  }
}

inline json schedule_to_json(const ParamSchedule& s) {
  static const char* names[] = {"f", "h", "g"};
  json out = json::array();
  for (const auto& e : s.entries()) {
    json ov = json::array();
    for (const auto& o : e.overrides) {
      ov.push_back({{"target", names[static_cast<int>(o.target)]},
                    {"index", o.index},
                    {"lo", detail::bound_to_json(o.lo)},
                    {"hi", detail::bound_to_json(o.hi)}});
    }
    out.push_back({{"t", e.t}, {"overrides", ov}});
  }
  return out;
}

inline ParamSchedule schedule_from_json(const json& j) {
  try {
    std::vector<ScheduleEntry> entries;
    for (const auto& e : j) {
      ScheduleEntry se{e.at("t").get<double>(), {}};
      for (const auto& o : e.value("overrides", json::array())) {
        const std::string t = o.at("target").get<std::string>();
        const Target target = t == "f" ? Target::f : t == "h" ? Target::h
                              : t == "g" ? Target::g
                                         : throw DimensionError("schedule: bad target '" + t + "'");
        se.overrides.push_back({target, o.at("index").get<Index>(),
                                detail::bound_from_json(o.at("lo")),
                                detail::bound_from_json(o.at("hi"))});
      }
      entries.push_back(std::move(se));
    }
    return ParamSchedule(std::move(entries));
  } catch (const json::exception& e) {
    throw DimensionError(std::string("schedule: ") + e.what());
  }
}

inline json certificate_to_json(const Certificate& c) {
  return {{"feasible", c.feasible}, {"rho", c.rho},       {"phi1", c.phi1},
          {"phi2", c.phi2},         {"kappaP", c.kappaP}, {"margin", c.margin},
          {"Lf_hat", c.Lf_hat},     {"Lh", c.Lh},         {"P", matrix_to_json(c.P)},
          {"diagnostics", c.diagnostics}};
}

inline DisturbanceSignal signal_from_json(const json& j) {
  std::vector<DisturbanceSegment> segs;
  for (const auto& s : j) {
    DisturbanceSegment d;
    d.t_start = s.value("t_start", 0.0);
    d.offset = vector_from_json(s.at("offset"), "offset");
    if (s.contains("amplitude")) d.amplitude = vector_from_json(s["amplitude"], "amplitude");
    d.frequency = s.value("frequency", 0.0);
    if (s.contains("phase")) d.phase = vector_from_json(s["phase"], "phase");
    segs.push_back(std::move(d));
  }
  return DisturbanceSignal(std::move(segs));
}

inline json signal_to_json(const DisturbanceSignal& w) {
  json out = json::array();
  for (const auto& s : w.segments()) {
    json d = {{"t_start", s.t_start}, {"offset", vector_to_json(s.offset)}};
    if (s.amplitude.size()) {
      d["amplitude"] = vector_to_json(s.amplitude);
      d["frequency"] = s.frequency;
    }
    if (s.phase.size()) d["phase"] = vector_to_json(s.phase);
    out.push_back(std::move(d));
  }
  return out;
}

/// A grid case file plus its optional event script.
struct GridCase {
  GridModel grid;
  Ieee9Script script;
  bool has_script = false;
};

/// {buses:[{id, m, d, type}], lines:[{from, to, b, p_min, p_max}],
///  gens:[ids], loads:[ids], scenario?:{t_end, w:[segments], line_events}}
/// Bus ids are arbitrary and map to indices in listed order; line_events
/// use 1-based line numbers.
inline GridCase grid_case_from_json(const json& j) {
  try {
    std::map<long, Index> index_of;
    const auto& buses = j.at("buses");
    VectorXd M(static_cast<Index>(buses.size())), D(static_cast<Index>(buses.size()));
    for (std::size_t i = 0; i < buses.size(); ++i) {
      const long id = buses[i].at("id").get<long>();
      if (!index_of.emplace(id, static_cast<Index>(i)).second) {
        throw DimensionError("case: duplicate bus id " + std::to_string(id));
      }
      M[static_cast<Index>(i)] = buses[i].at("m").get<double>();
      D[static_cast<Index>(i)] = buses[i].at("d").get<double>();
    }
    auto bus = [&](const json& v) {
      const auto it = index_of.find(v.get<long>());
      if (it == index_of.end()) {
        throw DimensionError("case: unknown bus id " + v.dump());
      }
      return it->second;
    };
    std::vector<Line> lines;
    for (const auto& l : j.at("lines")) {
      lines.push_back({bus(l.at("from")), bus(l.at("to")), l.at("b").get<double>(),
                       l.value("p_min", -1.5), l.value("p_max", 1.5)});
    }
    std::vector<Index> gens, loads;
    for (const auto& g : j.at("gens")) gens.push_back(bus(g));
    for (const auto& g : j.at("loads")) loads.push_back(bus(g));
    GridCase gc;
    gc.grid = make_grid(static_cast<Index>(buses.size()), std::move(lines), M, D,
                        std::move(gens), std::move(loads));
    if (j.contains("scenario")) {
      const auto& s = j["scenario"];
      gc.has_script = true;
      gc.script.t_end = s.value("t_end", 100.0);
      gc.script.w = signal_from_json(s.at("w"));
      for (const auto& e : s.value("line_events", json::array())) {
        gc.script.line_events.push_back({e.at("t").get<double>(),
                                         e.at("line").get<Index>() - 1,
                                         e.at("p_min").get<double>(),
                                         e.at("p_max").get<double>()});
      }
    }
    return gc;
  } catch (const json::exception& e) {
    throw DimensionError(std::string("case: ") + e.what());
  }
}

inline GridCase load_grid_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DimensionError("cannot open case file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DimensionError("case file '" + path + "': " + e.what());
  }
  return grid_case_from_json(j);
}

}  // namespace ofo
