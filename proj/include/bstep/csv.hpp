#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/kernel.hpp"
#include "bstep/lyapunov.hpp"
#include "bstep/simulator.hpp"

namespace bstep {

/// Shortest round-trip decimal, or `digits` significant digits when positive.
inline std::string format_number(double v, int digits = 0) {
  char buf[64];
  auto r = digits > 0 ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, digits)
                      : std::to_chars(buf, buf + sizeof buf, v);
  if (r.ec != std::errc()) throw InternalError("number formatting failed");
  return std::string(buf, r.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, int digits = 0) : out_(path, std::ios::binary), digits_(digits) {
    if (!out_) throw Error("cannot write " + path.string());
  }

  CsvWriter& header(const std::vector<std::string>& names) {
    for (std::size_t k = 0; k < names.size(); ++k) out_ << (k ? "," : "") << names[k];
    out_ << '\n';
    return *this;
  }
  CsvWriter& cell(double v) {
    sep();
    out_ << format_number(v, digits_);
    return *this;
  }
  CsvWriter& cell(int v) {
    sep();
    out_ << v;
    return *this;
  }
  void end() {
    out_ << '\n';
    first_ = true;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }

  std::ofstream out_;
  int digits_;
  bool first_ = true;
};

/// i,j,x,xi,value over every node of the triangle, 1-based channels; xi = 0 rows hold the bottom limit.
inline void write_kernel(const std::filesystem::path& path, const KernelField& K, bool full_precision) {
  CsvWriter w(path, full_precision ? 0 : 6);
  w.header({"i", "j", "x", "xi", "value"});
  const auto& g = K.grid().base();
  for (int i = 0; i < K.channels(); ++i)
    for (int j = 0; j < K.channels(); ++j)
      for (int p = 0; p <= g.cells(); ++p)
        for (int q = 0; q <= p; ++q) {
          w.cell(i + 1).cell(j + 1).cell(g.node(p)).cell(g.node(q)).cell(K.integrand(i, j, p, q));
          w.end();
        }
}

inline void write_curves(const std::filesystem::path& path, const KernelField& K) {
  CsvWriter w(path);
  w.header({"curve_id", "x", "xi"});
  for (std::size_t c = 0; c < K.curves.size(); ++c)
    for (const auto& pt : K.curves[c].points) {
      w.cell(static_cast<int>(c + 1)).cell(pt[0]).cell(pt[1]);
      w.end();
    }
}

inline void write_coupling(const std::filesystem::path& path, const TargetCoupling& G) {
  CsvWriter w(path);
  w.header({"i", "j", "x", "value"});
  for (int i = 0; i < G.n; ++i)
    for (int j = 0; j < G.m; ++j)
      for (int k = 0; k <= G.grid.cells(); ++k) {
        w.cell(i + 1).cell(j + 1).cell(G.grid.node(k)).cell(G.at(i, j, k));
        w.end();
      }
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& tr, int m) {
  CsvWriter w(path);
  std::vector<std::string> h{"t", "L2", "H1", "H2", "V0", "V1"};
  for (int j = 1; j <= m; ++j) h.push_back("bt_" + std::to_string(j));
  w.header(h);
  for (const auto& r : tr.records) {
    w.cell(r.t).cell(r.l2).cell(r.h1).cell(r.h2).cell(r.v0).cell(r.v1);
    for (double b : r.trace) w.cell(b);
    w.end();
  }
}

inline void write_snapshots(const std::filesystem::path& path, const Trajectory& tr, int n) {
  CsvWriter w(path);
  std::vector<std::string> h{"t", "x"};
  for (int i = 1; i <= n; ++i) h.push_back("u_" + std::to_string(i));
  w.header(h);
  for (const auto& s : tr.snapshots)
    for (int k = 0; k < s.grid().size(); ++k) {
      w.cell(s.t).cell(s.grid().node(k));
      for (int i = 0; i < n; ++i) w.cell(s(i, k));
      w.end();
    }
}

inline void write_controls(const std::filesystem::path& path, const Trajectory& tr, int m) {
  CsvWriter w(path);
  std::vector<std::string> h{"t"};
  for (int r = 1; r <= m; ++r) h.push_back("U_" + std::to_string(r));
  for (int r = 1; r <= m; ++r) h.push_back("ab_" + std::to_string(r));
  w.header(h);
  for (const auto& c : tr.controls) {
    w.cell(c.t);
    for (double u : c.control) w.cell(u);
    for (double o : c.offset) w.cell(o);
    w.end();
  }
}

/// key=value block.
class ReportWriter {
 public:
  explicit ReportWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  ReportWriter& put(const std::string& key, double v) {
    out_ << key << '=' << format_number(v) << '\n';
    return *this;
  }
  ReportWriter& put(const std::string& key, const std::string& v) {
    out_ << key << '=' << v << '\n';
    return *this;
  }

 private:
  std::ofstream out_;
};

inline void write_design(const std::filesystem::path& path, const LyapunovDesign& d) {
  ReportWriter r(path);
  r.put("lambda", d.lambda).put("delta", d.delta).put("mu", d.mu).put("M", d.M);
  r.put("mu_mode", d.mu_mode == MuMode::AsWritten ? "as_written" : "conservative");
  r.put("p_mode", d.p_mode == PMode::Minus ? "minus" : "plus");
  r.put("p_fallback", d.p_fallback ? "yes" : "no");
  for (int k = 0; k < d.m; ++k) r.put("b." + std::to_string(k + 1), d.b(k));
  for (int k = 0; k < d.m; ++k) r.put("s." + std::to_string(k + 1), d.s(k));
  for (int k = 0; k < d.m; ++k) r.put("C." + std::to_string(k + 1), d.C(k));
  for (int i = 0; i < d.m; ++i)
    for (int j = 0; j < d.m; ++j) r.put("P." + std::to_string(i + 1) + "." + std::to_string(j + 1), d.P(i, j));
  r.put("margin.delta", d.delta_margin).put("margin.b", d.b_margin);
  r.put("margin.gershgorin", d.gershgorin_margin).put("margin.sp_min_eigenvalue", d.sp_min_eigenvalue);
  r.put("certified", d.certified() ? "yes" : "no");
}

}  // namespace bstep
