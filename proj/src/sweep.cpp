#include "ptrm/sweep.hpp"

#include <algorithm>

namespace ptrm {

CorrectnessMatrix correctness_matrix(std::span<const PuzzleOutcome> outcomes) {
  const std::size_t k = outcomes.empty() ? 0 : outcomes.front().rollout_correct.size();
  CorrectnessMatrix m(outcomes.size(), k);
  m.answers.resize(outcomes.size() * k);
  for (std::size_t p = 0; p < outcomes.size(); ++p) {
    const auto& o = outcomes[p];
    if (o.rollout_correct.size() != k || o.rollout_q.size() != k || o.rollout_answers.size() != k)
      throw ContractViolation("correctness_matrix: every puzzle needs the same rollout count");
    for (std::size_t j = 0; j < k; ++j) {
      const auto idx = m.index(p, j);
      m.correct[idx] = o.rollout_correct[j];
      m.q[idx] = o.rollout_q[j];
      m.answers[idx] = o.rollout_answers[j];
      m.hashes[idx] = hash_answer(o.rollout_answers[j]);
    }
  }
  return m;
}

template <typename T>
SweepTable sigma_sweep(const ModelParams<T>& params, std::span<const PuzzleInstance> puzzles,
                       const SweepOptions& opts) {
  if (opts.sigmas.empty() || opts.seeds.empty())
    throw ContractViolation("sigma_sweep: need at least one sigma and one seed");
  if (puzzles.empty()) throw ContractViolation("sigma_sweep: empty puzzle set");
  SweepTable table;
  const auto det = deterministic_accuracy(params, puzzles, opts.depth, opts.workers);
  table.deterministic = det.exact;
  for (double sigma : opts.sigmas) {
    SweepSummary sum;
    sum.sigma = sigma;
    std::vector<double> pass, best, mode;
    for (auto seed : opts.seeds) {
      InferenceConfig cfg;
      cfg.rollouts = opts.rollouts;
      cfg.depth = opts.depth;
      cfg.sigma = sigma;
      cfg.master_seed = seed;
      cfg.workers = opts.workers;
      const auto outcomes = evaluate_puzzles(params, puzzles, cfg);
      const auto m = correctness_matrix(outcomes);
      const auto k = static_cast<std::size_t>(opts.rollouts);
      SweepRow row{sigma, seed, det.exact, pass_at_k(m, k), best_q_at_k(m, k), mode_at_k(m, k)};
      table.rows.push_back(row);
      pass.push_back(row.pass);
      best.push_back(row.best_q);
      mode.push_back(row.mode);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& spread) {
      mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      spread = *hi - *lo;
    };
    stats(pass, sum.pass_mean, sum.pass_spread);
    stats(best, sum.best_q_mean, sum.best_q_spread);
    stats(mode, sum.mode_mean, sum.mode_spread);
    table.summary.push_back(sum);
  }
  return table;
}

template SweepTable sigma_sweep(const ModelParams<float>&, std::span<const PuzzleInstance>, const SweepOptions&);
template SweepTable sigma_sweep(const ModelParams<double>&, std::span<const PuzzleInstance>, const SweepOptions&);

}  // namespace ptrm
