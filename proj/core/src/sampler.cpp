#include "hazardfield/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double kinetic(const Eigen::VectorXd& p, const Eigen::VectorXd& inv_mass) {
  return 0.5 * p.array().square().matrix().dot(inv_mass);
}

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = -kInf;

  double hamiltonian(const Eigen::VectorXd& inv_mass) const {
    return -logp + kinetic(p, inv_mass);
  }
};

// One leapfrog step starting from a point with a valid cached gradient.
// Returns false when anything goes non-finite.
bool step_point(const LogDensityGradient& logp_fn, PhasePoint& z, double step,
                const Eigen::VectorXd& inv_mass) {
  z.p += 0.5 * step * z.grad;
  z.q += step * (inv_mass.array() * z.p.array()).matrix();
  z.logp = logp_fn(z.q, &z.grad);
  if (!std::isfinite(z.logp) || !z.grad.allFinite()) {
    z.logp = -kInf;
    return false;
  }
  z.p += 0.5 * step * z.grad;
  return true;
}

struct Tree {
  PhasePoint backward;   // boundary in the negative direction
  PhasePoint forward;    // boundary in the positive direction
  Eigen::VectorXd rho;   // sum of momenta over the subtree
  Eigen::VectorXd proposal;
  double log_sum_w = -kInf;
  double sum_accept = 0.0;
  int n_leaf = 0;
  int n_leapfrog = 0;
  bool diverged = false;
  bool turned = false;
};

bool uturn(const Eigen::VectorXd& p_backward, const Eigen::VectorXd& p_forward,
           const Eigen::VectorXd& rho, const Eigen::VectorXd& inv_mass) {
  const Eigen::VectorXd v = (inv_mass.array() * rho.array()).matrix();
  return p_backward.dot(v) < 0.0 || p_forward.dot(v) < 0.0;
}

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct TreeContext {
  const LogDensityGradient& logp_fn;
  const Eigen::VectorXd& inv_mass;
  double step = 0.0;
  double h0 = 0.0;
  double divergence_threshold = 0.0;
  RngStream& rng;
};

Tree build_leaf(TreeContext& ctx, const PhasePoint& from, int direction) {
  Tree t;
  PhasePoint z = from;
  const bool ok = step_point(ctx.logp_fn, z, direction * ctx.step, ctx.inv_mass);
  t.n_leapfrog = 1;
  t.backward = z;
  t.forward = z;
  t.rho = z.p;
  t.proposal = z.q;
  t.n_leaf = 1;
  const double h = ok ? z.hamiltonian(ctx.inv_mass) : kInf;
  const double dh = h - ctx.h0;  // energy error
  if (!std::isfinite(h) || dh > ctx.divergence_threshold) {
    t.diverged = true;
    t.log_sum_w = -kInf;
    t.sum_accept = 0.0;
  } else {
    t.log_sum_w = -dh;
    t.sum_accept = std::min(1.0, std::exp(-dh));
  }
  return t;
}

// Builds a subtree of 2^depth leapfrog steps extending from `from` in
// `direction`. Proposals inside a subtree are combined multinomially.
Tree build_tree(TreeContext& ctx, const PhasePoint& from, int direction, int depth) {
  if (depth == 0) return build_leaf(ctx, from, direction);

  Tree inner = build_tree(ctx, from, direction, depth - 1);
  if (inner.diverged || inner.turned) return inner;

  const PhasePoint& edge = (direction > 0) ? inner.forward : inner.backward;
  Tree outer = build_tree(ctx, edge, direction, depth - 1);

  Tree t;
  t.n_leapfrog = inner.n_leapfrog + outer.n_leapfrog;
  t.sum_accept = inner.sum_accept + outer.sum_accept;
  t.n_leaf = inner.n_leaf + outer.n_leaf;
  t.diverged = outer.diverged;
  t.turned = outer.turned;
  t.backward = (direction > 0) ? inner.backward : outer.backward;
  t.forward = (direction > 0) ? outer.forward : inner.forward;
  if (t.diverged || t.turned) {
    t.log_sum_w = inner.log_sum_w;
    t.proposal = inner.proposal;
    t.rho = inner.rho;
    return t;
  }
  t.log_sum_w = log_sum_exp(inner.log_sum_w, outer.log_sum_w);
  const double p_outer = std::exp(outer.log_sum_w - t.log_sum_w);
  t.proposal = (ctx.rng.uniform() < p_outer) ? outer.proposal : inner.proposal;
  t.rho = inner.rho + outer.rho;
  t.turned = uturn(t.backward.p, t.forward.p, t.rho, ctx.inv_mass);
  return t;
}

PhasePoint make_point(const LogDensityGradient& logp_fn, const Eigen::VectorXd& q) {
  PhasePoint z;
  z.q = q;
  z.p = Eigen::VectorXd::Zero(q.size());
  z.logp = logp_fn(q, &z.grad);
  return z;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw ConfigError("chains must be >= 1");
  if (warmup_iters < 150) throw ConfigError("warmup_iters must be >= 150");
  if (sampling_iters < 1) throw ConfigError("sampling_iters must be >= 1");
  if (target_accept <= 0.0 || target_accept >= 1.0) {
    throw ConfigError("target_accept must be in (0, 1)");
  }
  if (max_tree_depth < 1) throw ConfigError("max_tree_depth must be >= 1");
}

int ChainOutput::divergence_count() const {
  int n = 0;
  for (const auto d : divergent) n += d;
  return n;
}

int ChainOutput::max_depth_hits(int max_depth) const {
  int n = 0;
  for (const auto d : treedepth) n += (d >= max_depth);
  return n;
}

bool leapfrog(const LogDensityGradient& logp, Eigen::VectorXd& q, Eigen::VectorXd& p,
              double step, const Eigen::VectorXd& inv_mass) {
  PhasePoint z = make_point(logp, q);
  if (!std::isfinite(z.logp) || !z.grad.allFinite()) return false;
  z.p = p;
  const bool ok = step_point(logp, z, step, inv_mass);
  q = z.q;
  p = z.p;
  return ok;
}

NutsStats nuts_transition(const LogDensityGradient& logp, Eigen::VectorXd& q, double step,
                          const Eigen::VectorXd& inv_mass, RngStream& rng,
                          int max_tree_depth, double divergence_threshold) {
  PhasePoint z0 = make_point(logp, q);
  if (!std::isfinite(z0.logp)) {
    throw SamplerError("nuts_transition: log density not finite at the current state");
  }
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    z0.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
  }
  TreeContext ctx{logp, inv_mass, step, z0.hamiltonian(inv_mass), divergence_threshold, rng};

  Tree tree;
  tree.backward = z0;
  tree.forward = z0;
  tree.rho = z0.p;
  tree.proposal = z0.q;
  tree.log_sum_w = 0.0;

  NutsStats stats;
  double sum_accept = 0.0;
  int n_leaf = 0;
  for (int depth = 0; depth < max_tree_depth; ++depth) {
    const int direction = rng.uniform() < 0.5 ? -1 : 1;
    const PhasePoint& edge = (direction > 0) ? tree.forward : tree.backward;
    Tree sub = build_tree(ctx, edge, direction, depth);
    sum_accept += sub.sum_accept;
    n_leaf += sub.n_leaf;
    stats.n_leapfrog += sub.n_leapfrog;
    if (sub.diverged || sub.turned) {
      stats.divergent = sub.diverged;
      break;
    }
    stats.depth = depth + 1;
    // Biased progressive sampling toward the new subtree.
    const double p_new = std::exp(std::min(0.0, sub.log_sum_w - tree.log_sum_w));
    if (rng.uniform() < p_new) tree.proposal = sub.proposal;
    tree.log_sum_w = log_sum_exp(tree.log_sum_w, sub.log_sum_w);
    if (direction > 0) {
      tree.forward = sub.forward;
    } else {
      tree.backward = sub.backward;
    }
    tree.rho += sub.rho;
    if (uturn(tree.backward.p, tree.forward.p, tree.rho, inv_mass)) break;
  }
  q = tree.proposal;
  stats.accept_stat = (n_leaf > 0) ? sum_accept / n_leaf : 0.0;
  stats.energy = ctx.h0;
  return stats;
}

namespace {

// Nesterov dual averaging of log step size (Hoffman & Gelman 2014 defaults).
class DualAverage {
 public:
  void reset(double step, double target) {
    mu_ = std::log(10.0 * step);
    target_ = target;
    log_step_ = std::log(step);
    log_step_bar_ = std::log(step);
    h_bar_ = 0.0;
    m_ = 1;
  }
  void update(double accept) {
    accept = std::isnan(accept) ? 0.0 : std::min(accept, 1.0);
    const double eta = 1.0 / (m_ + t0_);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept);
    log_step_ = mu_ - std::sqrt(static_cast<double>(m_)) / gamma_ * h_bar_;
    const double w = std::pow(static_cast<double>(m_), -kappa_);
    log_step_bar_ = w * log_step_ + (1.0 - w) * log_step_bar_;
    ++m_;
  }
  double step() const { return std::exp(log_step_); }
  double averaged_step() const { return std::exp(log_step_bar_); }

 private:
  double mu_ = 0.0, target_ = 0.8, log_step_ = 0.0, log_step_bar_ = 0.0, h_bar_ = 0.0;
  int m_ = 1;
  static constexpr double gamma_ = 0.05;
  static constexpr double t0_ = 10.0;
  static constexpr double kappa_ = 0.75;
};

class Welford {
 public:
  void reset(Eigen::Index dim) {
    n_ = 0;
    mean_ = Eigen::VectorXd::Zero(dim);
    m2_ = Eigen::VectorXd::Zero(dim);
  }
  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }
  long count() const { return n_; }
  Eigen::VectorXd variance() const {
    return (n_ > 1) ? (m2_ / static_cast<double>(n_ - 1)).eval()
                    : Eigen::VectorXd::Ones(mean_.size());
  }

 private:
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

double find_initial_step(const LogDensityGradient& logp, const Eigen::VectorXd& q,
                         const Eigen::VectorXd& inv_mass, RngStream& rng) {
  PhasePoint z0 = make_point(logp, q);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    z0.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
  }
  const double h0 = z0.hamiltonian(inv_mass);
  double step = 1.0;
  auto accept_of = [&](double s) {
    PhasePoint z = z0;
    if (!step_point(logp, z, s, inv_mass)) return 0.0;
    const double h = z.hamiltonian(inv_mass);
    return std::isfinite(h) ? std::exp(h0 - h) : 0.0;
  };
  double a = accept_of(step);
  for (int i = 0; i < 50 && a == 0.0; ++i) {  // back off from immediate blow-ups
    step *= 0.5;
    a = accept_of(step);
  }
  const double dir = (a > 0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 50; ++i) {
    if (dir > 0 ? (a <= 0.5) : (a >= 0.5)) break;
    step *= (dir > 0) ? 2.0 : 0.5;
    a = accept_of(step);
  }
  return step;
}

struct WarmupWindows {
  int init_end;
  std::vector<int> slow_ends;  // mass updates at these iterations
};

WarmupWindows plan_windows(int warmup) {
  constexpr int kInit = 75;
  constexpr int kTerm = 50;
  constexpr int kBase = 25;
  WarmupWindows w;
  w.init_end = kInit;
  int start = kInit;
  int size = kBase;
  const int slow_end = warmup - kTerm;
  while (start < slow_end) {
    int end = start + size;
    // Absorb a remainder too small for another doubling into this window.
    if (end + 2 * size > slow_end) end = slow_end;
    w.slow_ends.push_back(end);
    start = end;
    size *= 2;
  }
  return w;
}

}  // namespace

AdaptResult adapt(const LogDensityGradient& logp, const Eigen::VectorXd& init,
                  const SamplerConfig& config, RngStream& rng) {
  config.validate();
  const Eigen::Index dim = init.size();
  Eigen::VectorXd q = init;
  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);

  DualAverage da;
  double step = find_initial_step(logp, q, inv_mass, rng);
  da.reset(step, config.target_accept);

  const WarmupWindows windows = plan_windows(config.warmup_iters);
  std::size_t next_window = 0;
  Welford welford;
  welford.reset(dim);

  int divergences = 0;
  for (int it = 1; it <= config.warmup_iters; ++it) {
    const NutsStats stats = nuts_transition(logp, q, da.step(), inv_mass, rng,
                                            config.max_tree_depth,
                                            config.divergence_threshold);
    divergences += stats.divergent;
    da.update(stats.accept_stat);
    if (it > windows.init_end && next_window < windows.slow_ends.size()) {
      welford.add(q);
      if (it == windows.slow_ends[next_window]) {
        const double n = static_cast<double>(welford.count());
        const Eigen::VectorXd var = welford.variance();
        inv_mass = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
        welford.reset(dim);
        ++next_window;
        step = find_initial_step(logp, q, inv_mass, rng);
        da.reset(step, config.target_accept);
      }
    }
  }
  if (divergences >= config.warmup_iters) {
    throw SamplerError("adaptation failed: every warmup iteration diverged");
  }
  AdaptResult out;
  out.step = da.averaged_step();
  out.inv_mass = inv_mass;
  out.state = q;
  out.warmup_divergences = divergences;
  return out;
}

namespace {

ChainOutput run_single_chain(const LogDensityGradient& logp, std::size_t dim,
                             const DrawReporter& report, const std::vector<std::string>& names,
                             const SamplerConfig& config, int chain_index) {
  RngStream rng = RngStream::keyed(config.seed, static_cast<std::uint64_t>(chain_index));
  Eigen::VectorXd q(static_cast<Eigen::Index>(dim));
  bool initialized = false;
  for (int attempt = 0; attempt < config.init_retries; ++attempt) {
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q[i] = rng.uniform(-config.init_radius, config.init_radius);
    }
    Eigen::VectorXd grad;
    const double lp = logp(q, &grad);
    if (std::isfinite(lp) && grad.allFinite()) {
      initialized = true;
      break;
    }
  }
  if (!initialized) {
    throw SamplerError("initialization failed: log posterior not finite after " +
                       std::to_string(config.init_retries) + " retries");
  }

  const AdaptResult adapted = adapt(logp, q, config, rng);
  q = adapted.state;

  ChainOutput out;
  out.names = names;
  const Eigen::VectorXd first = report(q);
  out.draws.resize(config.sampling_iters, first.size());
  out.divergent.resize(static_cast<std::size_t>(config.sampling_iters));
  out.treedepth.resize(static_cast<std::size_t>(config.sampling_iters));
  out.accept_stat.resize(static_cast<std::size_t>(config.sampling_iters));
  out.stepsize.resize(static_cast<std::size_t>(config.sampling_iters));
  for (int it = 0; it < config.sampling_iters; ++it) {
    const NutsStats stats = nuts_transition(logp, q, adapted.step, adapted.inv_mass, rng,
                                            config.max_tree_depth,
                                            config.divergence_threshold);
    out.draws.row(it) = report(q).transpose();
    out.divergent[static_cast<std::size_t>(it)] = stats.divergent ? 1 : 0;
    out.treedepth[static_cast<std::size_t>(it)] = stats.depth;
    out.accept_stat[static_cast<std::size_t>(it)] = stats.accept_stat;
    out.stepsize[static_cast<std::size_t>(it)] = adapted.step;
  }
  return out;
}

}  // namespace

std::vector<ChainOutput> run_chains(const LogDensityGradient& logp, std::size_t dim,
                                    const DrawReporter& report,
                                    const std::vector<std::string>& names,
                                    const SamplerConfig& config) {
  config.validate();
  std::vector<ChainOutput> outputs(static_cast<std::size_t>(config.chains));
  const int workers = std::max(1, std::min(config.threads, config.chains));
  if (workers == 1) {
    for (int c = 0; c < config.chains; ++c) {
      outputs[static_cast<std::size_t>(c)] =
          run_single_chain(logp, dim, report, names, config, c);
    }
    return outputs;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int c = next.fetch_add(1);
        if (c >= config.chains) return;
        try {
          outputs[static_cast<std::size_t>(c)] =
              run_single_chain(logp, dim, report, names, config, c);
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return outputs;
}

}  // namespace hazardfield
