#include "pnmcts/policynet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

namespace pnmcts {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
// derivative expressed through the activation value: 1 above zero, a+1 below
inline double elu_grad_from_act(double a) { return a > 0.0 ? 1.0 : a + 1.0; }

struct ArrayRef {
  double* data;
  Eigen::Index size;
};

void collect(NetParams& p, std::vector<ArrayRef>& out) {
  for (auto& l : p.layers) {
    out.push_back({l.w.data(), l.w.size()});
    out.push_back({l.b.data(), l.b.size()});
    out.push_back({l.gamma.data(), l.gamma.size()});
    out.push_back({l.beta.data(), l.beta.size()});
  }
  out.push_back({p.policy_w.data(), p.policy_w.size()});
  out.push_back({p.policy_b.data(), p.policy_b.size()});
  out.push_back({p.value_w.data(), p.value_w.size()});
  out.push_back({p.value_b.data(), p.value_b.size()});
}

void collect(const NetGradients& g, std::vector<ArrayRef>& out) {
  auto& gm = const_cast<NetGradients&>(g);
  for (auto& l : gm.layers) {
    out.push_back({l.w.data(), l.w.size()});
    out.push_back({l.b.data(), l.b.size()});
    out.push_back({l.gamma.data(), l.gamma.size()});
    out.push_back({l.beta.data(), l.beta.size()});
  }
  out.push_back({gm.policy_w.data(), gm.policy_w.size()});
  out.push_back({gm.policy_b.data(), gm.policy_b.size()});
  out.push_back({gm.value_w.data(), gm.value_w.size()});
  out.push_back({gm.value_b.data(), gm.value_b.size()});
}

NetGradients zero_gradients(const NetParams& net) {
  NetGradients g;
  g.layers.reserve(net.layers.size());
  for (const auto& l : net.layers) {
    g.layers.push_back({MatX::Zero(l.w.rows(), l.w.cols()), VecX::Zero(l.b.size()),
                        VecX::Zero(l.gamma.size()), VecX::Zero(l.beta.size())});
  }
  g.policy_w = MatX::Zero(net.policy_w.rows(), net.policy_w.cols());
  g.policy_b = VecX::Zero(net.policy_b.size());
  g.value_w = MatX::Zero(net.value_w.rows(), net.value_w.cols());
  g.value_b = VecX::Zero(net.value_b.size());
  return g;
}

bool all_finite(const NetGradients& g) {
  std::vector<ArrayRef> refs;
  collect(g, refs);
  for (const auto& r : refs) {
    for (Eigen::Index i = 0; i < r.size; ++i) {
      if (!std::isfinite(r.data[i])) return false;
    }
  }
  return true;
}

}  // namespace

NetParams init_random(const NetConfig& cfg, std::uint64_t seed) {
  if (cfg.input_dim <= 0 || cfg.hidden_layers <= 0 || cfg.hidden_width <= 0 ||
      cfg.action_dim <= 0) {
    throw std::invalid_argument("init_random: all network dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto he = [&rng, &normal](Eigen::Index rows, Eigen::Index cols) {
    MatX w(rows, cols);
    const double s = std::sqrt(2.0 / double(cols));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = s * normal(rng);
    return w;
  };

  NetParams net;
  net.config = cfg;
  int fan_in = cfg.input_dim;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    LayerParams lp;
    lp.w = he(cfg.hidden_width, fan_in);
    lp.b = VecX::Zero(cfg.hidden_width);
    lp.gamma = VecX::Ones(cfg.hidden_width);
    lp.beta = VecX::Zero(cfg.hidden_width);
    net.layers.push_back(std::move(lp));
    net.stats.push_back({VecX::Zero(cfg.hidden_width), VecX::Ones(cfg.hidden_width)});
    fan_in = cfg.hidden_width;
  }
  // small head weights so the initial policy is near-uniform over legal moves
  net.policy_w = 0.01 * he(cfg.action_dim, cfg.hidden_width);
  net.policy_b = VecX::Zero(cfg.action_dim);
  net.value_w = 0.01 * he(1, cfg.hidden_width);
  net.value_b = VecX::Zero(1);
  return net;
}

std::optional<PolicyValue> forward(const NetParams& net, const VecX& features, const MaskX& mask) {
  if (features.size() != net.config.input_dim) {
    throw std::invalid_argument("forward: feature length " + std::to_string(features.size()) +
                                " != input_dim " + std::to_string(net.config.input_dim));
  }
  if (mask.size() != net.config.action_dim) {
    throw std::invalid_argument("forward: mask length != action_dim");
  }
  if (!mask.any()) return std::nullopt;

  VecX h = features;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& lp = net.layers[l];
    const auto& st = net.stats[l];
    VecX z = lp.w * h + lp.b;
    VecX xh = (z - st.running_mean).array() / (st.running_var.array() + kBnEps).sqrt();
    VecX y = lp.gamma.array() * xh.array() + lp.beta.array();
    h = y.unaryExpr([](double v) { return elu(v); });
  }

  VecX logits = net.policy_w * h + net.policy_b;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < logits.size(); ++a) {
    if (mask[a] && logits[a] > max_logit) max_logit = logits[a];
  }
  VecX policy = VecX::Zero(logits.size());
  double z_sum = 0.0;
  for (Eigen::Index a = 0; a < logits.size(); ++a) {
    if (mask[a]) {
      policy[a] = std::exp(logits[a] - max_logit);
      z_sum += policy[a];
    }
  }
  policy /= z_sum;

  const double value = std::tanh((net.value_w * h)(0) + net.value_b(0));
  return PolicyValue{std::move(policy), value};
}

LossResult loss(const NetParams& net, const Batch& batch, const TrainConfig& cfg) {
  const int B = batch.size();
  if (B < 1) throw std::invalid_argument("loss: empty batch");
  if (batch.features.rows() != net.config.input_dim || batch.features.cols() != B ||
      batch.target_policy.rows() != net.config.action_dim || batch.target_policy.cols() != B ||
      static_cast<int>(batch.masks.size()) != B) {
    throw std::invalid_argument("loss: batch shapes do not match the network config");
  }

  const std::size_t L = net.layers.size();
  std::vector<MatX> acts(L + 1);   // acts[l] = activations entering layer l
  std::vector<MatX> xhat(L);       // normalized pre-activations
  std::vector<MatX> post(L);       // elu outputs
  std::vector<VecX> inv_std(L), bmean(L), bvar(L);

  acts[0] = batch.features;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& lp = net.layers[l];
    MatX z = (lp.w * acts[l]).colwise() + lp.b;
    bmean[l] = z.rowwise().mean();
    MatX centered = z.colwise() - bmean[l];
    bvar[l] = centered.array().square().rowwise().mean();
    inv_std[l] = (bvar[l].array() + kBnEps).rsqrt();
    xhat[l] = centered.array().colwise() * inv_std[l].array();
    MatX y = (xhat[l].array().colwise() * lp.gamma.array()).colwise() + lp.beta.array();
    post[l] = y.unaryExpr([](double v) { return elu(v); });
    acts[l + 1] = post[l];
  }

  MatX logits = (net.policy_w * acts[L]).colwise() + net.policy_b;
  Eigen::RowVectorXd u = (net.value_w * acts[L]).row(0).array() + net.value_b(0);
  Eigen::RowVectorXd v = u.array().tanh();

  MatX dlogits = MatX::Zero(logits.rows(), B);
  Eigen::RowVectorXd du(B);
  double total = 0.0;
  const double inv_b = 1.0 / B;

  for (int j = 0; j < B; ++j) {
    const MaskX& mask = batch.masks[j];
    if (mask.size() != net.config.action_dim) {
      throw std::invalid_argument("loss: mask length != action_dim");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Eigen::Index a = 0; a < mask.size(); ++a) {
      if (mask[a]) {
        any = true;
        max_logit = std::max(max_logit, logits(a, j));
      }
    }
    if (!any) throw std::invalid_argument("loss: sample " + std::to_string(j) + " has no legal action");

    double zsum = 0.0;
    for (Eigen::Index a = 0; a < mask.size(); ++a) {
      if (mask[a]) zsum += std::exp(logits(a, j) - max_logit);
    }
    const double log_z = std::log(zsum);

    double ce = 0.0, ent = 0.0;
    for (Eigen::Index a = 0; a < mask.size(); ++a) {
      if (!mask[a]) continue;
      const double logp = logits(a, j) - max_logit - log_z;
      const double p = std::exp(logp);
      ce -= batch.target_policy(a, j) * logp;
      ent -= p * logp;
    }
    const double mse = (v(j) - batch.target_value(j)) * (v(j) - batch.target_value(j));
    total += inv_b * (ce + mse - cfg.entropy_beta * ent);

    for (Eigen::Index a = 0; a < mask.size(); ++a) {
      if (!mask[a]) continue;
      const double logp = logits(a, j) - max_logit - log_z;
      const double p = std::exp(logp);
      dlogits(a, j) =
          inv_b * ((p - batch.target_policy(a, j)) + cfg.entropy_beta * p * (logp + ent));
    }
    du(j) = inv_b * 2.0 * (v(j) - batch.target_value(j)) * (1.0 - v(j) * v(j));
  }

  NetGradients g = zero_gradients(net);
  g.policy_w = dlogits * acts[L].transpose();
  g.policy_b = dlogits.rowwise().sum();
  g.value_w = du * acts[L].transpose();
  g.value_b = VecX::Constant(1, du.sum());

  MatX dh = net.policy_w.transpose() * dlogits + net.value_w.transpose() * du;
  for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
    const auto& lp = net.layers[l];
    MatX dy = dh.array() * post[l].unaryExpr([](double a) { return elu_grad_from_act(a); }).array();
    g.layers[l].gamma = (dy.array() * xhat[l].array()).rowwise().sum();
    g.layers[l].beta = dy.rowwise().sum();
    MatX dxh = dy.array().colwise() * lp.gamma.array();
    VecX m1 = dxh.rowwise().mean();
    VecX m2 = (dxh.array() * xhat[l].array()).rowwise().mean();
    MatX dz = ((dxh.colwise() - m1).array() - (xhat[l].array().colwise() * m2.array()))
                  .colwise() *
              inv_std[l].array();
    g.layers[l].w = dz * acts[l].transpose();
    g.layers[l].b = dz.rowwise().sum();
    if (l > 0) dh = lp.w.transpose() * dz;
  }

  g.batch_mean = std::move(bmean);
  g.batch_var = std::move(bvar);
  return {total, std::move(g)};
}

double global_grad_norm(const NetGradients& g) {
  std::vector<ArrayRef> refs;
  collect(g, refs);
  double sq = 0.0;
  for (const auto& r : refs) {
    for (Eigen::Index i = 0; i < r.size; ++i) sq += r.data[i] * r.data[i];
  }
  return std::sqrt(sq);
}

double clip_global_norm(NetGradients& g, double max_norm) {
  const double norm = global_grad_norm(g);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  std::vector<ArrayRef> refs;
  collect(g, refs);
  for (auto& r : refs) {
    for (Eigen::Index i = 0; i < r.size; ++i) r.data[i] *= scale;
  }
  return scale;
}

void accumulate_and_step(NetParams& net, AdamState& adam, std::span<const NetGradients> grads,
                         const TrainConfig& cfg) {
  if (grads.empty()) throw std::invalid_argument("accumulate_and_step: no gradient batches");

  std::vector<const NetGradients*> valid;
  for (const auto& g : grads) {
    if (all_finite(g)) {
      valid.push_back(&g);
    } else {
      std::cerr << "[policynet] warning: discarding non-finite gradient batch\n";
    }
  }
  if (valid.empty()) return;

  NetGradients avg = zero_gradients(net);
  {
    std::vector<ArrayRef> avg_refs;
    collect(avg, avg_refs);
    const double w = 1.0 / double(valid.size());
    for (const NetGradients* g : valid) {
      std::vector<ArrayRef> refs;
      collect(*g, refs);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        for (Eigen::Index k = 0; k < refs[i].size; ++k) {
          avg_refs[i].data[k] += w * refs[i].data[k];
        }
      }
    }
  }

  clip_global_norm(avg, 1.0 + cfg.clip_epsilon);

  std::vector<ArrayRef> params;
  collect(net, params);
  std::vector<ArrayRef> avg_refs;
  collect(avg, avg_refs);

  if (adam.m.empty()) {
    for (const auto& r : params) {
      adam.m.push_back(VecX::Zero(r.size));
      adam.v.push_back(VecX::Zero(r.size));
    }
  }
  adam.step += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, double(adam.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, double(adam.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data;
    const double* g = avg_refs[i].data;
    double* m = adam.m[i].data();
    double* v = adam.v[i].data();
    for (Eigen::Index k = 0; k < params[i].size; ++k) {
      const double gk = g[k];
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * gk;
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }

  // fold recorded batch statistics into the running averages
  for (std::size_t l = 0; l < net.stats.size(); ++l) {
    VecX mean = VecX::Zero(net.stats[l].running_mean.size());
    VecX var = VecX::Zero(net.stats[l].running_var.size());
    int n = 0;
    for (const NetGradients* g : valid) {
      if (g->batch_mean.size() != net.stats.size()) continue;
      mean += g->batch_mean[l];
      var += g->batch_var[l];
      ++n;
    }
    if (n == 0) continue;
    mean /= double(n);
    var /= double(n);
    net.stats[l].running_mean = (1.0 - kBnMomentum) * net.stats[l].running_mean + kBnMomentum * mean;
    net.stats[l].running_var = (1.0 - kBnMomentum) * net.stats[l].running_var + kBnMomentum * var;
  }
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_array(std::ostream& os, const double* data, std::uint64_t n) {
  write_u64(os, n);
  os.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
}

void read_array(std::istream& is, double* data, std::uint64_t expected) {
  const std::uint64_t n = read_u64(is);
  if (n != expected) throw std::runtime_error("checkpoint: array size mismatch");
  is.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(double)));
}

constexpr char kMagic[8] = {'P', 'N', 'E', 'T', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  const auto& cfg = ckpt.params.config;
  write_u64(os, 1);  // version
  write_u64(os, std::uint64_t(cfg.input_dim));
  write_u64(os, std::uint64_t(cfg.hidden_layers));
  write_u64(os, std::uint64_t(cfg.hidden_width));
  write_u64(os, std::uint64_t(cfg.action_dim));
  write_u64(os, ckpt.iteration);
  const bool has_adam = ckpt.adam && !ckpt.adam->m.empty();
  write_u64(os, has_adam ? 1 : 0);

  auto& p = const_cast<NetParams&>(ckpt.params);
  std::vector<ArrayRef> refs;
  collect(p, refs);
  for (const auto& r : refs) write_array(os, r.data, std::uint64_t(r.size));
  for (const auto& st : ckpt.params.stats) {
    write_array(os, st.running_mean.data(), std::uint64_t(st.running_mean.size()));
    write_array(os, st.running_var.data(), std::uint64_t(st.running_var.size()));
  }
  if (has_adam) {
    write_u64(os, std::uint64_t(ckpt.adam->step));
    for (const auto& m : ckpt.adam->m) write_array(os, m.data(), std::uint64_t(m.size()));
    for (const auto& v : ckpt.adam->v) write_array(os, v.data(), std::uint64_t(v.size()));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  if (read_u64(is) != 1) throw std::runtime_error("unsupported checkpoint version");

  NetConfig cfg;
  cfg.input_dim = int(read_u64(is));
  cfg.hidden_layers = int(read_u64(is));
  cfg.hidden_width = int(read_u64(is));
  cfg.action_dim = int(read_u64(is));

  Checkpoint ckpt;
  ckpt.iteration = read_u64(is);
  const bool has_adam = read_u64(is) != 0;
  ckpt.params = init_random(cfg, 0);  // shapes only; overwritten below

  std::vector<ArrayRef> refs;
  collect(ckpt.params, refs);
  for (auto& r : refs) read_array(is, r.data, std::uint64_t(r.size));
  for (auto& st : ckpt.params.stats) {
    read_array(is, st.running_mean.data(), std::uint64_t(st.running_mean.size()));
    read_array(is, st.running_var.data(), std::uint64_t(st.running_var.size()));
  }
  if (has_adam) {
    AdamState adam;
    adam.step = long(read_u64(is));
    for (const auto& r : refs) {
      VecX m(r.size);
      read_array(is, m.data(), std::uint64_t(r.size));
      adam.m.push_back(std::move(m));
    }
    for (const auto& r : refs) {
      VecX v(r.size);
      read_array(is, v.data(), std::uint64_t(r.size));
      adam.v.push_back(std::move(v));
    }
    ckpt.adam = std::move(adam);
  }
  if (!is) throw std::runtime_error("checkpoint truncated: " + path.string());
  return ckpt;
}

}  // namespace pnmcts
