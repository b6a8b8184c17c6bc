#include "ratekit/rts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ratekit/errors.hpp"
#include "ratekit/parallel.hpp"
#include "ratekit/table_io.hpp"

namespace ratekit {

namespace {

constexpr uint64_t kWalkerStreamKey = 0x77a1c3;
constexpr uint64_t kResampleKey = 0x5e5a/*mple*/;
constexpr uint64_t kInitKey = 0x171;

RngStream walker_stream(uint64_t master, uint64_t uid) {
  return RngStream(master).derive(kWalkerStreamKey, uid);
}

const Potential& dynamics_potential(const Dynamics& dyn, double* beta) {
  if (auto* b = dynamic_cast<const BrownianDynamics*>(&dyn)) {
    *beta = b->params().beta;
    return b->potential();
  }
  if (auto* m = dynamic_cast<const MetropolisDynamics*>(&dyn)) {
    *beta = m->params().beta;
    return m->potential();
  }
  throw ConfigError("dynamics does not expose a potential");
}

}  // namespace

Eigen::VectorXd Ensemble::color_mass() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_colors);
  std::vector<double> comp(n_colors, 0.0);
  for (const auto& w : walkers) {
    double& s = m(w.color);
    double t = s + w.weight;
    if (std::abs(s) >= w.weight)
      comp[w.color] += (s - t) + w.weight;
    else
      comp[w.color] += (w.weight - t) + s;
    s = t;
  }
  for (int c = 0; c < n_colors; ++c) m(c) += comp[c];
  return m;
}

Ensemble init_rts_ensemble(const Dynamics& dyn, const CellPartition& part,
                           const std::vector<BasinRegion>& basins, const RtsConfig& cfg,
                           uint64_t master_seed) {
  if (basins.size() < 2) throw ConfigError("need at least two tagged basins");
  if (cfg.target_per_cell_per_color < 1)
    throw ConfigError("target walker count must be >= 1");
  double beta = 1.0;
  const Potential& pot = dynamics_potential(dyn, &beta);

  Ensemble ens;
  ens.partition = part;
  ens.n_colors = static_cast<int>(basins.size());
  ens.config = cfg;
  ens.master_seed = master_seed;

  std::vector<double> mass = cfg.initial_color_mass;
  if (mass.empty()) mass.assign(basins.size(), 1.0 / basins.size());
  if (mass.size() != basins.size())
    throw ConfigError("initial_color_mass size must match the basin count");

  RngStream rng = RngStream(master_seed).derive(kInitKey, 0);
  for (int color = 0; color < ens.n_colors; ++color) {
    const BasinRegion& reg = basins[color];
    auto draw_uniform = [&](double xy[2]) {
      if (reg.kind == BasinRegion::Kind::Interval) {
        xy[0] = reg.a + rng.uniform() * (reg.b - reg.a);
        xy[1] = 0.0;
        return;
      }
      for (;;) {
        double x = reg.cx + (2 * rng.uniform() - 1) * reg.r;
        double y = reg.cy + (2 * rng.uniform() - 1) * reg.r;
        if (reg.contains(x, y)) {
          xy[0] = x;
          xy[1] = y;
          return;
        }
      }
    };
    // cells overlapped by the region, probed on a scatter of points
    std::vector<char> seen(part.n_cells, 0);
    int cells = 0;
    for (int probe = 0; probe < 512; ++probe) {
      double xy[2];
      draw_uniform(xy);
      int c = part.assign(xy[0], xy[1]);
      if (!seen[c]) {
        seen[c] = 1;
        ++cells;
      }
    }
    const int count = cfg.target_per_cell_per_color * std::max(1, cells);
    std::vector<Walker> batch;
    double wsum = 0.0;
    for (int k = 0; k < count; ++k) {
      Walker w;
      double xy[2];
      draw_uniform(xy);
      dyn.from_coords(xy, w.state);
      double snapped[2];
      dyn.to_coords(w.state, snapped);
      w.weight = std::exp(-beta * pot(snapped[0], snapped[1]));
      w.color = color;
      w.uid = ens.next_uid++;
      w.rng = walker_stream(master_seed, w.uid);
      wsum += w.weight;
      batch.push_back(w);
    }
    for (auto& w : batch) {
      w.weight *= mass[color] / wsum;
      ens.walkers.push_back(w);
    }
  }
  return ens;
}

std::vector<Walker> resample(std::vector<Walker> group, int target, RngStream& rng) {
  if (group.empty()) throw NumericalError("resample needs a non-empty group");
  if (target < 1) throw NumericalError("resample target must be >= 1");
  for (const auto& w : group)
    if (!(w.weight > 0.0)) throw NumericalError("resample weights must be > 0");

  // descending sort; the loop consumes from the light end
  std::stable_sort(group.begin(), group.end(), [](const Walker& a, const Walker& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.uid < b.uid;
  });
  std::vector<double> ws(group.size());
  for (size_t i = 0; i < group.size(); ++i) ws[i] = group[i].weight;
  const double W = neumaier_sum(ws);
  const double tw = W / target;

  std::vector<Walker> out;
  out.reserve(target);
  long iterations = 0;
  const long budget = static_cast<long>(group.size()) + target + 4;
  int count = 0;

  Walker x = group.back();
  group.pop_back();
  for (;;) {
    if (++iterations > budget)
      throw NumericalError("resample failed to terminate within its bound");
    if (x.weight >= tw || group.empty()) {
      int r = std::max(1, static_cast<int>(std::floor(x.weight / tw)));
      r = std::min(r, target - count);
      for (int q = 0; q < r; ++q) {
        Walker copy = x;
        copy.weight = tw;
        if (q > 0) {
          copy.uid = 0;  // fresh stream assigned by the caller
          copy.rng = RngStream();
        }
        out.push_back(copy);
      }
      count += r;
      double leftover = x.weight - r * tw;
      x.uid = 0;
      x.rng = RngStream();
      if (count < target && leftover > 0.0) {
        x.weight = leftover;
        group.push_back(x);
      }
      if (group.empty()) break;
      x = group.back();
      group.pop_back();
    } else {
      Walker y = group.back();
      group.pop_back();
      double wxy = x.weight + y.weight;
      if (rng.uniform() < y.weight / wxy) x = y;
      x.weight = wxy;
    }
  }
  if (count != target)
    throw NumericalError("resample produced " + std::to_string(count) +
                         " walkers instead of " + std::to_string(target));
  return out;
}

FluxRecord rts_step(Ensemble& ens, const Dynamics& dyn,
                    const std::vector<BasinRegion>& basins, int workers) {
  const int nc = ens.n_colors;
  const long nw = static_cast<long>(ens.walkers.size());
  FluxRecord rec;
  rec.color_mass = ens.color_mass();
  rec.transferred = Eigen::MatrixXd::Zero(nc, nc);

  // advance all walkers; each owns its stream, so any worker count gives
  // identical states
  std::vector<int> entered(nw, -1), cellof(nw, 0);
  parallel_for(nw, workers, [&](long i) {
    Walker& w = ens.walkers[i];
    dyn.step(w.state, w.rng);
    double xy[2];
    dyn.to_coords(w.state, xy);
    cellof[i] = ens.partition.assign(xy[0], xy[1]);
    for (size_t b = 0; b < basins.size(); ++b)
      if (basins[b].contains(xy[0], xy[1])) {
        entered[i] = static_cast<int>(b);
        break;
      }
  });

  // recolor in walker order (deterministic flux accumulation)
  for (long i = 0; i < nw; ++i) {
    Walker& w = ens.walkers[i];
    if (entered[i] >= 0 && entered[i] != w.color) {
      rec.transferred(w.color, entered[i]) += w.weight;
      w.color = entered[i];
    }
  }

  // group by (cell, color) and resample back to the target
  std::vector<std::vector<int>> groups(
      static_cast<size_t>(ens.partition.n_cells) * nc);
  for (long i = 0; i < nw; ++i)
    groups[static_cast<size_t>(cellof[i]) * nc + ens.walkers[i].color].push_back(
        static_cast<int>(i));

  const long step = ens.step_index + 1;
  std::vector<Walker> next;
  next.reserve(nw);
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    if (static_cast<long>(groups[g].size()) > ens.config.hard_cap)
      throw NumericalError("cell-color group exceeded the hard cap before resample");
    std::vector<Walker> group;
    group.reserve(groups[g].size());
    for (int idx : groups[g]) group.push_back(ens.walkers[idx]);
    RngStream grng =
        RngStream(ens.master_seed).derive(kResampleKey, step).derive(g);
    auto kept = resample(std::move(group), ens.config.target_per_cell_per_color, grng);
    for (auto& w : kept) next.push_back(std::move(w));
  }
  for (auto& w : next)
    if (w.uid == 0) {
      w.uid = ens.next_uid++;
      w.rng = walker_stream(ens.master_seed, w.uid);
    }
  ens.walkers = std::move(next);
  ens.step_index = step;
  rec.step = step;
  return rec;
}

FluxRate rate_from_flux(const std::vector<FluxRecord>& records, long burn_in, double dt,
                        int from_color, int to_color) {
  const long n = static_cast<long>(records.size()) - burn_in;
  if (n <= 0)
    throw InsufficientDataError("no flux records after burn-in");
  std::vector<double> j(n);
  for (long i = 0; i < n; ++i) {
    const FluxRecord& r = records[burn_in + i];
    double mass = r.color_mass(from_color);
    j[i] = mass > 0.0 ? r.transferred(from_color, to_color) / (mass * dt) : 0.0;
  }
  FluxRate out;
  out.rate = neumaier_sum(j) / static_cast<double>(n);

  // block averaging: double the block length until the error estimate
  // stops growing (within 5%), which absorbs the autocorrelation
  auto blocked_se = [&](long L, long* nblocks) {
    long nb = n / L;
    *nblocks = nb;
    if (nb < 2) return 0.0;
    double mean = 0;
    std::vector<double> bm(nb);
    for (long b = 0; b < nb; ++b) {
      double s = 0;
      for (long q = b * L; q < (b + 1) * L; ++q) s += j[q];
      bm[b] = s / L;
      mean += bm[b];
    }
    mean /= nb;
    double var = 0;
    for (long b = 0; b < nb; ++b) var += (bm[b] - mean) * (bm[b] - mean);
    var /= (nb - 1);
    return std::sqrt(var / nb);
  };
  long L = 1, nb = 0;
  double se = blocked_se(1, &nb);
  out.block_length = 1;
  out.blocks = nb;
  while (2 * L <= n / 8) {
    long nb2 = 0;
    double se2 = blocked_se(2 * L, &nb2);
    L *= 2;
    bool stable = se2 <= 1.05 * se && se > 0.0;
    se = std::max(se, se2);
    out.block_length = L;
    out.blocks = nb2;
    if (stable) break;
  }
  out.stderr_block = se;
  return out;
}

RateEstimate rate_from_flux(const std::vector<FluxRecord>& records, long burn_in,
                            double dt) {
  FluxRate f = rate_from_flux(records, burn_in, dt, 0, 1);
  FluxRate b = rate_from_flux(records, burn_in, dt, 1, 0);
  RateEstimate r;
  r.forward = f.rate;
  r.backward = b.rate;
  r.stderr_fwd = f.stderr_block;
  r.stderr_bwd = b.stderr_block;
  return r;
}

Eigen::VectorXd steady_state_weights(const Eigen::MatrixXd& N, const Eigen::VectorXd& T) {
  const int n = static_cast<int>(N.rows());
  if (N.cols() != n || T.size() != n)
    throw NumericalError("count matrix and time vector sizes disagree");
  for (int i = 0; i < n; ++i)
    if (!(T(i) > 0)) throw NumericalError("cell times must be positive");

  // strong connectivity of the flux graph (Kosaraju); failure lists the
  // components
  {
    std::vector<int> order;
    std::vector<char> vis(n, 0);
    std::function<void(int)> dfs1 = [&](int u) {
      vis[u] = 1;
      for (int v = 0; v < n; ++v)
        if (u != v && N(u, v) > 0 && !vis[v]) dfs1(v);
      order.push_back(u);
    };
    for (int i = 0; i < n; ++i)
      if (!vis[i]) dfs1(i);
    std::vector<int> comp(n, -1);
    int ncomp = 0;
    std::function<void(int, int)> dfs2 = [&](int u, int c) {
      comp[u] = c;
      for (int v = 0; v < n; ++v)
        if (u != v && N(v, u) > 0 && comp[v] < 0) dfs2(v, c);
    };
    for (int k = n - 1; k >= 0; --k)
      if (comp[order[k]] < 0) dfs2(order[k], ncomp++);
    if (ncomp > 1) {
      std::ostringstream os;
      os << "flux graph is not strongly connected; components:";
      for (int c = 0; c < ncomp; ++c) {
        os << " {";
        bool first = true;
        for (int i = 0; i < n; ++i)
          if (comp[i] == c) {
            os << (first ? "" : ",") << i;
            first = false;
          }
        os << "}";
      }
      throw NumericalError(os.str());
    }
  }

  // uniformized jump chain shares the generator's stationary vector
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  double lam = 0.0;
  for (int i = 0; i < n; ++i) {
    double rs = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) {
        K(i, j) = N(i, j) / T(i);
        rs += K(i, j);
      }
    lam = std::max(lam, rs);
  }
  Eigen::MatrixXd P = K / lam;
  for (int i = 0; i < n; ++i) P(i, i) = 1.0 - P.row(i).sum();
  Eigen::VectorXd W = gth_stationary(P);
  for (int i = 0; i < n; ++i)
    if (!(W(i) >= 0)) throw NumericalError("negative steady-state weight");
  return W;
}

Eigen::VectorXd multicolor_mfpt(const Eigen::MatrixXd& flux, double dt, int absorbing) {
  const int n = static_cast<int>(flux.rows());
  if (flux.cols() != n) throw NumericalError("flux matrix must be square");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double out = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) {
        if (flux(i, j) < 0) throw NumericalError("fluxes must be non-negative");
        P(i, j) = dt * flux(i, j);
        out += P(i, j);
      }
    if (out > 1.0 + 1e-12)
      throw NumericalError("flux row " + std::to_string(i) +
                           " is not normalizable at this dt");
    P(i, i) = std::max(0.0, 1.0 - out);
  }
  return solve_absorbing_mfpt(P, absorbing, dt);
}

void write_checkpoint(const std::filesystem::path& path, const Ensemble& ens) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open checkpoint file " + path.string());
  out << "ratekit-rts v1\n";
  out << "seed " << ens.master_seed << "\n";
  out << "step " << ens.step_index << "\n";
  out << "next_uid " << ens.next_uid << "\n";
  out << "colors " << ens.n_colors << "\n";
  out << "target " << ens.config.target_per_cell_per_color << "\n";
  out << "walkers " << ens.walkers.size() << "\n";
  for (const auto& w : ens.walkers) {
    out << w.uid << " " << w.rng.seed() << " " << w.rng.counter() << " " << w.color
        << " " << format_double(w.weight) << " " << format_double(w.state[0]) << " "
        << format_double(w.state[1]) << "\n";
  }
}

Ensemble read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint file " + path.string());
  std::string header;
  std::getline(in, header);
  if (header != "ratekit-rts v1")
    throw ConfigError("unsupported checkpoint header: " + header);
  Ensemble ens;
  std::string key;
  size_t count = 0;
  in >> key >> ens.master_seed;
  in >> key >> ens.step_index;
  in >> key >> ens.next_uid;
  in >> key >> ens.n_colors;
  in >> key >> ens.config.target_per_cell_per_color;
  in >> key >> count;
  ens.walkers.resize(count);
  for (size_t i = 0; i < count; ++i) {
    Walker& w = ens.walkers[i];
    uint64_t seed = 0, counter = 0;
    in >> w.uid >> seed >> counter >> w.color >> w.weight >> w.state[0] >> w.state[1];
    w.rng = RngStream(seed, counter);
  }
  if (!in) throw ConfigError("truncated checkpoint file " + path.string());
  return ens;
}

std::string color_name(int c) {
  static const char* names[] = {"blue", "red", "green", "yellow", "purple"};
  if (c >= 0 && c < 5) return names[c];
  return "c" + std::to_string(c);
}

void write_flux_csv(const std::filesystem::path& path,
                    const std::vector<FluxRecord>& records, bool dat_format) {
  TableWriter w(path, {"step", "pair", "transferred_weight", "color_mass"},
                dat_format ? TableFormat::Dat : TableFormat::Csv);
  for (const auto& rec : records) {
    const int nc = static_cast<int>(rec.color_mass.size());
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) {
        if (a == b) continue;
        w.row(std::vector<std::string>{
            std::to_string(rec.step), color_name(a) + "->" + color_name(b),
            format_double(rec.transferred(a, b)), format_double(rec.color_mass(a))});
      }
  }
}

}  // namespace ratekit
