#pragma once

#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "scanrl/env.hpp"
#include "scanrl/mlp.hpp"

namespace scanrl {

struct PpoConfig {
  MlpDims dims;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double learning_rate = 3e-4;
  int rollout_steps = 2048;
  int minibatch_size = 64;
  int epochs = 10;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  long total_steps = 200000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;
};

struct GaeResult {
  Eigen::VectorXd advantages;  // raw, not normalized
  Eigen::VectorXd returns;
};

// Generalized advantage estimation. dones[t] == 1 means the transition at
// step t was terminal; the value bootstrap is masked there. last_value is
// V(s_{T}) for the state after the final transition.
inline GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                             const std::vector<std::uint8_t>& dones, double last_value,
                             double gamma, double lambda) {
  const int n = static_cast<int>(rewards.size());
  if (values.size() != n || static_cast<int>(dones.size()) != n) {
    throw Error("compute_gae: length mismatch");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double gae = 0;
  for (int t = n - 1; t >= 0; --t) {
    const double nonterminal = dones[t] ? 0.0 : 1.0;
    const double next_value = (t == n - 1) ? last_value : values[t + 1];
    const double delta = rewards[t] + gamma * next_value * nonterminal - values[t];
    gae = delta + gamma * lambda * nonterminal * gae;
    out.advantages[t] = gae;
    out.returns[t] = gae + values[t];
  }
  return out;
}

struct PpoBatch {
  Eigen::MatrixXd obs;        // B x n_in
  Eigen::MatrixXd a_raw;      // B x n_act
  Eigen::VectorXd logp_old;   // B
  Eigen::VectorXd advantage;  // B, normalized by the caller
  Eigen::VectorXd ret;        // B
};

struct PpoLossStats {
  double loss = 0;
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
  double approx_kl = 0;
};

// Clipped-surrogate PPO loss
//   L = -mean(min(r A, clip(r, 1-e, 1+e) A)) + c_v mean((V - ret)^2) - c_e H
// with r the probability ratio of the squashed Gaussian policy. When grads
// is non-null the exact analytic gradient is accumulated into it.
inline PpoLossStats ppo_loss(const MlpParams& p, const PpoBatch& batch, const PpoConfig& cfg,
                             MlpGrads* grads = nullptr) {
  const int B = static_cast<int>(batch.obs.rows());
  if (B == 0) throw Error("ppo_loss: empty batch");
  PpoLossStats s;
  const double inv_b = 1.0 / B;
  for (int k = 0; k < B; ++k) {
    const MlpForward f = mlp_forward(p, batch.obs.row(k).transpose());
    const Eigen::VectorXd a_raw = batch.a_raw.row(k).transpose();
    const double logp_new = squashed_gaussian_logp(f.mu, p.log_std, a_raw);
    const double ratio = std::exp(logp_new - batch.logp_old[k]);
    const double adv = batch.advantage[k];
    const double surr1 = ratio * adv;
    const double surr2 = clip_scalar(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
    const bool clipped = surr2 < surr1;
    s.policy_loss += -(clipped ? surr2 : surr1) * inv_b;
    s.approx_kl += (batch.logp_old[k] - logp_new) * inv_b;
    if (std::abs(ratio - 1.0) > cfg.clip_epsilon) s.clip_fraction += inv_b;

    const double verr = f.value - batch.ret[k];
    s.value_loss += verr * verr * inv_b;

    if (grads) {
      // d(-surr)/dlogp_new is -ratio*adv on the unclipped branch and 0 on
      // the clipped one (the clamp is flat there)
      const double dlogp = clipped ? 0.0 : -ratio * adv * inv_b;
      Eigen::VectorXd dmu(p.dims.n_act);
      for (int i = 0; i < p.dims.n_act; ++i) {
        const double sigma = std::exp(p.log_std[i]);
        const double z = (a_raw[i] - f.mu[i]) / sigma;
        dmu[i] = dlogp * z / sigma;
        grads->log_std[i] += dlogp * (z * z - 1.0);
      }
      const double dvalue = cfg.value_coef * 2.0 * verr * inv_b;
      mlp_backward(p, f, dmu, dvalue, *grads);
    }
  }
  s.entropy = gaussian_entropy(p.log_std);
  if (grads && cfg.entropy_coef != 0.0) {
    grads->log_std.array() -= cfg.entropy_coef;
  }
  s.loss = s.policy_loss + cfg.value_coef * s.value_loss - cfg.entropy_coef * s.entropy;
  if (!std::isfinite(s.loss)) {
    throw Error("ppo_loss: non-finite loss (policy " + std::to_string(s.policy_loss) +
                ", value " + std::to_string(s.value_loss) + ")");
  }
  return s;
}

class AdamOptimizer {
 public:
  AdamOptimizer(int n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(n)),
        v_(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params -= (lr_ / bc1) * m_.cwiseQuotient(((v_ / bc2).cwiseSqrt().array() + eps_).matrix());
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

inline void clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  const double n = grad.norm();
  if (n > max_norm && n > 0) grad *= max_norm / n;
}

struct IterStats {
  int iteration = 0;
  long steps = 0;
  double mean_ep_reward = 0;
  double mean_ep_len = 0;
  double normalized_reward = 0;  // mean over episodes of reward / length
  int episodes = 0;
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
  double approx_kl = 0;
};

struct TrainHooks {
  std::function<void(long step, double reward, const RewardBreakdown& parts)> on_step;
  std::function<void(const IterStats&)> on_iteration;
};

struct TrainResult {
  MlpParams params;
  MlpParams best_params;
  double best_normalized = -std::numeric_limits<double>::infinity();
  std::vector<IterStats> history;
  long steps_done = 0;
  bool aborted = false;
  std::string abort_message;
};

struct EvalStats {
  double mean_normalized_reward = 0;
  double mean_ep_reward = 0;
  double mean_ep_len = 0;
  int episodes = 0;
};

// Trailing moving average; pins what "smoothed" means in reports and tests.
inline std::vector<double> smoothed_series(const std::vector<double>& v, int window) {
  std::vector<double> out(v.size());
  double acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

// Deterministic (mean action) policy evaluation over full episodes.
template <class Env>
EvalStats evaluate_policy(Env& env, const MlpParams& params, int episodes) {
  EvalStats st;
  st.episodes = episodes;
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd obs = env.reset();
    double total = 0;
    long len = 0;
    while (true) {
      const Eigen::VectorXd a = deterministic_action(params, obs);
      auto res = env.step_normalized(Eigen::Vector3d(a[0], a[1], a[2]));
      total += res.reward;
      ++len;
      obs = res.obs;
      if (res.done) break;
    }
    st.mean_ep_reward += static_cast<double>(total) / episodes;
    st.mean_ep_len += static_cast<double>(len) / episodes;
    st.mean_normalized_reward += (total / std::max<long>(len, 1)) / episodes;
  }
  return st;
}

// On-policy PPO training loop: fixed-length rollouts, GAE, minibatch Adam
// updates with per-minibatch advantage normalization. Fully deterministic
// for a fixed config seed.
template <class Env>
TrainResult train(Env& env, const PpoConfig& cfg, const TrainHooks& hooks = {}) {
  MlpParams params = MlpParams::init(cfg.dims, mix_seed(cfg.seed, 3));
  Rng policy_rng(mix_seed(cfg.seed, 1));
  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  AdamOptimizer adam(params.param_count(), cfg.learning_rate);

  TrainResult result;
  const int T = cfg.rollout_steps;
  Eigen::MatrixXd obs_buf(T, cfg.dims.n_in);
  Eigen::MatrixXd araw_buf(T, cfg.dims.n_act);
  Eigen::VectorXd logp_buf(T), reward_buf(T), value_buf(T);
  std::vector<std::uint8_t> done_buf(T);

  Eigen::VectorXd obs = env.reset();
  double ep_reward = 0;
  long ep_len = 0;
  long global_step = 0;
  int iteration = 0;

  while (result.steps_done < cfg.total_steps) {
    ++iteration;
    double ep_reward_sum = 0, ep_norm_sum = 0;
    long ep_len_sum = 0;
    int ep_count = 0;

    try {
      for (int t = 0; t < T; ++t) {
        const ActionSample s = sample_action(params, obs, policy_rng);
        obs_buf.row(t) = obs.transpose();
        araw_buf.row(t) = s.a_raw.transpose();
        logp_buf[t] = s.logp;
        value_buf[t] = s.value;
        auto res = env.step_normalized(Eigen::Vector3d(s.action[0], s.action[1], s.action[2]));
        reward_buf[t] = res.reward;
        done_buf[t] = res.done ? 1 : 0;
        ep_reward += res.reward;
        ++ep_len;
        ++global_step;
        if (hooks.on_step) {
          if constexpr (requires { res.breakdown; }) {
            hooks.on_step(global_step, res.reward, res.breakdown);
          } else {
            hooks.on_step(global_step, res.reward, RewardBreakdown{});
          }
        }
        if (res.done) {
          // Reaching the end plane or the step cap truncates the episode
          // rather than entering a failure state, so the successor value
          // stands in for the cut-off tail. Without the bootstrap the
          // all-penalty reward makes rushing the pass end look profitable.
          bool truncated = true;
          if constexpr (requires { res.reason; }) {
            truncated = res.reason != DoneReason::LostSurface;
          }
          if (truncated) {
            reward_buf[t] += cfg.gamma * mlp_forward(params, res.obs).value;
          }
          ep_reward_sum += ep_reward;
          ep_norm_sum += ep_reward / std::max<long>(ep_len, 1);
          ep_len_sum += ep_len;
          ++ep_count;
          ep_reward = 0;
          ep_len = 0;
          obs = env.reset();
        } else {
          obs = res.obs;
        }
      }
    } catch (const Error& e) {
      // keep the best checkpoint so far and hand the failure to the caller
      result.aborted = true;
      result.abort_message = e.what();
      break;
    }
    result.steps_done += T;

    const double last_value = mlp_forward(params, obs).value;
    const GaeResult gae = compute_gae(reward_buf, value_buf, done_buf, last_value, cfg.gamma,
                                      cfg.gae_lambda);

    std::vector<int> order(T);
    std::iota(order.begin(), order.end(), 0);
    PpoLossStats agg;
    int updates = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (int i = T - 1; i > 0; --i) {
        std::swap(order[i], order[shuffle_rng.below(static_cast<std::uint64_t>(i) + 1)]);
      }
      for (int start = 0; start < T; start += cfg.minibatch_size) {
        const int B = std::min(cfg.minibatch_size, T - start);
        PpoBatch batch;
        batch.obs.resize(B, cfg.dims.n_in);
        batch.a_raw.resize(B, cfg.dims.n_act);
        batch.logp_old.resize(B);
        batch.advantage.resize(B);
        batch.ret.resize(B);
        for (int k = 0; k < B; ++k) {
          const int idx = order[start + k];
          batch.obs.row(k) = obs_buf.row(idx);
          batch.a_raw.row(k) = araw_buf.row(idx);
          batch.logp_old[k] = logp_buf[idx];
          batch.advantage[k] = gae.advantages[idx];
          batch.ret[k] = gae.returns[idx];
        }
        const double mean = batch.advantage.mean();
        const double sd = std::sqrt((batch.advantage.array() - mean).square().sum() /
                                    std::max(B - 1, 1));
        batch.advantage = (batch.advantage.array() - mean) / (sd + 1e-8);

        MlpGrads grads(cfg.dims);
        const PpoLossStats st = ppo_loss(params, batch, cfg, &grads);
        Eigen::VectorXd g = grads.to_flat();
        clip_grad_norm(g, cfg.max_grad_norm);
        Eigen::VectorXd flat = params.to_flat();
        adam.step(flat, g);
        params = MlpParams::from_flat(cfg.dims, flat);

        agg.loss += st.loss;
        agg.policy_loss += st.policy_loss;
        agg.value_loss += st.value_loss;
        agg.entropy += st.entropy;
        agg.clip_fraction += st.clip_fraction;
        agg.approx_kl += st.approx_kl;
        ++updates;
      }
    }

    IterStats it;
    it.iteration = iteration;
    it.steps = result.steps_done;
    it.episodes = ep_count;
    if (ep_count > 0) {
      it.mean_ep_reward = ep_reward_sum / ep_count;
      it.mean_ep_len = static_cast<double>(ep_len_sum) / ep_count;
      it.normalized_reward = ep_norm_sum / ep_count;
    } else {
      it.mean_ep_reward = reward_buf.sum();
      it.mean_ep_len = static_cast<double>(T);
      it.normalized_reward = reward_buf.mean();
    }
    it.policy_loss = agg.policy_loss / updates;
    it.value_loss = agg.value_loss / updates;
    it.entropy = agg.entropy / updates;
    it.clip_fraction = agg.clip_fraction / updates;
    it.approx_kl = agg.approx_kl / updates;
    result.history.push_back(it);
    if (hooks.on_iteration) hooks.on_iteration(it);

    if (it.normalized_reward > result.best_normalized) {
      result.best_normalized = it.normalized_reward;
      result.best_params = params;
    }
  }

  result.params = params;
  if (result.history.empty()) result.best_params = params;
  return result;
}

}  // namespace scanrl
