#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/problem_corpus.hpp"
#include "mathbook/rng.hpp"

namespace mathbook {

/// Reserved token ids. Answer symbols start at kFirstSymbol.
namespace token {
inline constexpr int eos = 0;
inline constexpr int sep = 1;
inline constexpr int think = 2;
inline constexpr int first_symbol = 3;
}  // namespace token

inline constexpr std::string_view kSymbolChars = "0123456789abcdef";

struct PolicyShape {
  int vocab = 12;
  int feature_dim = 16;
  int embed = 8;
  int hidden = 24;
  int positions = 8;

  int symbols() const { return std::max(0, vocab - token::first_symbol); }
  int input_dim() const { return feature_dim + embed + positions + 1; }

  std::size_t embedding_size() const { return static_cast<std::size_t>((vocab + 1) * embed); }
  std::size_t hidden_size() const { return static_cast<std::size_t>(hidden * input_dim()); }
  std::size_t output_size() const { return static_cast<std::size_t>(vocab * (hidden + 1)); }
  std::size_t parameter_count() const { return embedding_size() + hidden_size() + output_size(); }

  void validate() const {
    if (vocab < 1 || vocab > 16) throw ValidationError("policy: vocabulary must be in [1,16]");
    if (feature_dim < 1 || embed < 1 || hidden < 1 || positions < 2) {
      throw ValidationError("policy: dimensions must be positive (positions >= 2)");
    }
    if (parameter_count() > 5000) throw ValidationError("policy: more than 5000 parameters");
  }

  json to_json() const {
    return {{"vocab", vocab}, {"feature_dim", feature_dim}, {"embed", embed},
            {"hidden", hidden}, {"positions", positions}};
  }

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Dense parameter vector. `version` increases with every applied update.
struct PolicyParams {
  std::vector<double> theta;
  std::uint64_t version = 0;

  void apply_update(std::span<const double> delta) {
    if (delta.size() != theta.size()) throw RuntimeAbort("update size mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += delta[i];
    for (double v : theta) {
      if (!std::isfinite(v)) throw RuntimeAbort("non-finite parameter after update");
    }
    ++version;
  }
};

struct Completion {
  std::vector<int> tokens;
  std::vector<double> per_token_logprob;
  std::string decoded_answer;
  bool format_ok = false;
  double temperature = 1.0;

  friend bool operator==(const Completion&, const Completion&) = default;
};

struct SyntheticTask {
  std::string id;
  std::vector<double> prompt_features;
  std::string correct_answer;
  DifficultyCoordinate coordinate;
  int required_steps = 1;
};

struct TaskSpace {
  int symbols = 9;
  int feature_dim = 16;
  int base_steps = 1;
  double visual_noise = 0.5;
  int context_distractors = 3;
};

/// Steps implied by a coordinate: one extra decision per step rank.
inline int required_steps_for(const DifficultyCoordinate& coord, const TaskSpace& space) {
  return space.base_steps + coord.s;
}

/// Scale of the step-count cue: feature value = required_steps / kStepCueScale.
inline constexpr double kStepCueScale = 8.0;

/// Task whose answer is `required_steps` consecutive symbols starting at a
/// hidden key. Features: key one-hot in the leading block, then one slot
/// holding the step-count cue, then the distractor tail. The visual axis adds
/// Gaussian noise to every feature, the contextual axis lights up distractor
/// slots in the tail.
/// `steps` overrides the coordinate-implied answer length when positive.
inline SyntheticTask make_task(std::string id, const DifficultyCoordinate& coord, std::uint64_t seed,
                               const TaskSpace& space = {}, int steps = 0) {
  if (space.symbols < 1 || space.symbols > static_cast<int>(kSymbolChars.size()) ||
      space.feature_dim <= space.symbols) {
    throw ValidationError("task space: need 1..16 symbols and feature_dim > symbols");
  }
  Rng rng(seed);
  SyntheticTask t;
  t.id = std::move(id);
  t.coordinate = coord;
  t.required_steps = steps > 0 ? steps : required_steps_for(coord, space);
  const int key = static_cast<int>(rng.below(static_cast<std::uint64_t>(space.symbols)));
  for (int j = 0; j < t.required_steps; ++j) {
    t.correct_answer += kSymbolChars[static_cast<std::size_t>((key + j) % space.symbols)];
  }
  t.prompt_features.assign(static_cast<std::size_t>(space.feature_dim), 0.0);
  t.prompt_features[static_cast<std::size_t>(key)] = 1.0;
  t.prompt_features[static_cast<std::size_t>(space.symbols)] = t.required_steps / kStepCueScale;
  const int tail = space.feature_dim - space.symbols - 1;
  if (coord.c && tail > 0) {
    for (int k = 0; k < space.context_distractors; ++k) {
      const auto slot = static_cast<std::size_t>(space.symbols) + 1 + rng.below(static_cast<std::uint64_t>(tail));
      t.prompt_features[slot] = 1.0;
    }
  }
  if (coord.v) {
    for (auto& f : t.prompt_features) f += space.visual_noise * rng.normal();
  }
  return t;
}

inline std::vector<SyntheticTask> generate_tasks(const DifficultyCoordinate& coord, int count, std::uint64_t seed,
                                                 const TaskSpace& space = {}) {
  if (count < 1) throw ValidationError("generate_tasks: count must be >= 1");
  std::vector<SyntheticTask> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(make_task("task-" + coord.axis_key() + "-" + std::to_string(i), coord,
                            derive_seed(seed, static_cast<std::uint64_t>(i)), space));
  }
  return out;
}

/// Toy task standing in for a corpus problem: one answer symbol per knowledge
/// point beyond the first, on top of base_steps. Seeded from the problem id
/// only, so the mapping does not depend on any run seed.
inline SyntheticTask problem_task(const Problem& p, const TaskSpace& space = {}) {
  return make_task(p.id, p.difficulty, fnv1a(p.id), space, space.base_steps + std::max(0, p.knowledge_count - 1));
}

struct SampleOptions {
  int group_size = 8;
  double temperature = 1.0;
  int max_len = 1024;
  bool greedy = false;
};

/// Per-position log-distributions over the vocabulary, one row per token.
using LogDistributions = std::vector<std::vector<double>>;

/// Single-hidden-layer tanh policy over a tiny vocabulary. The input at each
/// position is [prompt features | embedding of previous token | position
/// one-hot | 1]. The position slot is 0 before the separator and 1 + the number
/// of tokens emitted after it (capped) afterwards.
class ToyPolicy {
 public:
  explicit ToyPolicy(PolicyShape shape = {}) : shape_(shape) { shape_.validate(); }

  const PolicyShape& shape() const { return shape_; }
  std::size_t parameter_count() const { return shape_.parameter_count(); }

  std::vector<ParamSlice> slices() const {
    return {{"embedding", 0, shape_.embedding_size()},
            {"hidden", shape_.embedding_size(), shape_.hidden_size()},
            {"output", shape_.embedding_size() + shape_.hidden_size(), shape_.output_size()}};
  }

  PolicyParams zero_params() const { return {std::vector<double>(parameter_count(), 0.0), 0}; }

  PolicyParams init_params(std::uint64_t seed, double scale = 0.1) const {
    Rng rng(seed);
    PolicyParams p = zero_params();
    for (auto& v : p.theta) v = scale * rng.normal();
    return p;
  }

  std::vector<Completion> sample(const PolicyParams& params, const SyntheticTask& task, const SampleOptions& opts,
                                 std::uint64_t seed) const {
    check_params(params);
    if (opts.group_size < 1) throw ValidationError("sample: G must be >= 1");
    if (!(opts.temperature > 0.0)) throw ValidationError("sample: temperature must be > 0");
    if (opts.max_len < 1) throw ValidationError("sample: max_len must be >= 1");
    std::vector<Completion> out;
    out.reserve(static_cast<std::size_t>(opts.group_size));
    Workspace ws(shape_);
    for (int g = 0; g < opts.group_size; ++g) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(g)));
      Completion c;
      c.temperature = opts.temperature;
      PrefixState state;
      while (static_cast<int>(c.tokens.size()) < opts.max_len) {
        forward(params, task, state, opts.temperature, ws);
        int tok = 0;
        if (opts.greedy) {
          tok = static_cast<int>(std::max_element(ws.logp.begin(), ws.logp.end()) - ws.logp.begin());
        } else {
          const double u = rng.uniform();
          double acc = 0.0;
          tok = shape_.vocab - 1;
          for (int k = 0; k < shape_.vocab; ++k) {
            acc += std::exp(ws.logp[static_cast<std::size_t>(k)]);
            if (u < acc) {
              tok = k;
              break;
            }
          }
        }
        c.tokens.push_back(tok);
        c.per_token_logprob.push_back(ws.logp[static_cast<std::size_t>(tok)]);
        state.advance(tok);
        if (tok == token::eos) break;
      }
      std::tie(c.decoded_answer, c.format_ok) = decode(c.tokens);
      out.push_back(std::move(c));
    }
    return out;
  }

  /// Per-token log-probabilities of `completion` under `params` at the
  /// completion's own sampling temperature.
  std::vector<double> logprob(const PolicyParams& params, const SyntheticTask& task,
                              const Completion& completion) const {
    check_params(params);
    check_tokens(completion.tokens);
    std::vector<double> out;
    out.reserve(completion.tokens.size());
    Workspace ws(shape_);
    PrefixState state;
    for (int tok : completion.tokens) {
      forward(params, task, state, completion.temperature, ws);
      out.push_back(ws.logp[static_cast<std::size_t>(tok)]);
      state.advance(tok);
    }
    return out;
  }

  LogDistributions log_distributions(const PolicyParams& params, const SyntheticTask& task,
                                     const Completion& completion) const {
    check_params(params);
    check_tokens(completion.tokens);
    LogDistributions out;
    out.reserve(completion.tokens.size());
    Workspace ws(shape_);
    PrefixState state;
    for (int tok : completion.tokens) {
      forward(params, task, state, completion.temperature, ws);
      out.push_back(ws.logp);
      state.advance(tok);
    }
    return out;
  }

  /// grad += d/dtheta sum_t sum_v dlogp[t][v] * log p_t(v).
  void accumulate_gradient(const PolicyParams& params, const SyntheticTask& task, const Completion& completion,
                           const LogDistributions& dlogp, std::span<double> grad) const {
    check_params(params);
    check_tokens(completion.tokens);
    if (dlogp.size() != completion.tokens.size() || grad.size() != parameter_count()) {
      throw RuntimeAbort("accumulate_gradient: shape mismatch");
    }
    const auto H = static_cast<std::size_t>(shape_.hidden);
    const auto V = static_cast<std::size_t>(shape_.vocab);
    const auto I = static_cast<std::size_t>(shape_.input_dim());
    const auto E = static_cast<std::size_t>(shape_.embed);
    const auto F = static_cast<std::size_t>(shape_.feature_dim);
    const std::span<const double> wh = hidden_weights(params);
    const std::span<const double> wo = output_weights(params);
    double* g_emb = grad.data();
    double* g_wh = grad.data() + shape_.embedding_size();
    double* g_wo = g_wh + shape_.hidden_size();

    Workspace ws(shape_);
    std::vector<double> dz(V), dh(H), da(H);
    PrefixState state;
    const double inv_t = 1.0 / completion.temperature;
    for (std::size_t t = 0; t < completion.tokens.size(); ++t) {
      forward(params, task, state, completion.temperature, ws);
      const auto& g = dlogp[t];
      double gsum = 0.0;
      for (std::size_t k = 0; k < V; ++k) gsum += g[k];
      bool any = false;
      for (std::size_t k = 0; k < V; ++k) {
        dz[k] = inv_t * (g[k] - std::exp(ws.logp[k]) * gsum);
        any = any || dz[k] != 0.0;
      }
      if (any) {
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t k = 0; k < V; ++k) {
          const double* row = wo.data() + k * (H + 1);
          double* grow = g_wo + k * (H + 1);
          for (std::size_t j = 0; j < H; ++j) {
            grow[j] += dz[k] * ws.h[j];
            dh[j] += dz[k] * row[j];
          }
          grow[H] += dz[k];
        }
        for (std::size_t j = 0; j < H; ++j) da[j] = dh[j] * (1.0 - ws.h[j] * ws.h[j]);
        double* g_row_emb = g_emb + static_cast<std::size_t>(state.prev) * E;
        for (std::size_t j = 0; j < H; ++j) {
          if (da[j] == 0.0) continue;
          const double* row = wh.data() + j * I;
          double* grow = g_wh + j * I;
          for (std::size_t i = 0; i < I; ++i) grow[i] += da[j] * ws.x[i];
          for (std::size_t e = 0; e < E; ++e) g_row_emb[e] += da[j] * row[F + e];
        }
      }
      state.advance(completion.tokens[t]);
    }
  }

  /// Answer text after the separator; format is ok iff exactly one separator.
  std::pair<std::string, bool> decode(const std::vector<int>& tokens) const {
    std::string answer;
    int seps = 0;
    for (int tok : tokens) {
      if (tok == token::eos) break;
      if (tok == token::sep) {
        ++seps;
        continue;
      }
      if (seps == 0) continue;
      answer += symbol_char(tok);
    }
    return {answer, seps == 1};
  }

  /// Target completion for supervised training: separator, symbols, end.
  Completion encode_target(std::string_view answer) const {
    Completion c;
    c.tokens.push_back(token::sep);
    for (char ch : answer) {
      const auto pos = kSymbolChars.find(ch);
      if (pos == std::string_view::npos || static_cast<int>(pos) >= shape_.symbols()) {
        throw ValidationError(std::string("answer symbol '") + ch + "' not in vocabulary");
      }
      c.tokens.push_back(token::first_symbol + static_cast<int>(pos));
    }
    c.tokens.push_back(token::eos);
    std::tie(c.decoded_answer, c.format_ok) = decode(c.tokens);
    return c;
  }

  json checkpoint(const PolicyParams& params) const {
    check_params(params);
    json slices = json::object();
    for (const auto& s : this->slices()) {
      slices[s.name] = std::vector<double>(params.theta.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                           params.theta.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
    }
    return {{"version", params.version}, {"shape", shape_.to_json()}, {"slices", slices}};
  }

  PolicyParams restore(const json& doc) const {
    const auto shape = require_field<json>(doc, "shape", "checkpoint");
    PolicyShape s{shape.at("vocab"), shape.at("feature_dim"), shape.at("embed"), shape.at("hidden"),
                  shape.at("positions")};
    if (!(s == shape_)) throw ValidationError("checkpoint: shape does not match the policy");
    PolicyParams p = zero_params();
    p.version = require_field<std::uint64_t>(doc, "version", "checkpoint");
    const auto slices_doc = require_field<json>(doc, "slices", "checkpoint");
    for (const auto& sl : slices()) {
      const auto values = require_field<std::vector<double>>(slices_doc, sl.name.c_str(), "checkpoint slices");
      if (values.size() != sl.size) throw ValidationError("checkpoint: slice '" + sl.name + "' has wrong size");
      std::copy(values.begin(), values.end(), p.theta.begin() + static_cast<std::ptrdiff_t>(sl.offset));
    }
    return p;
  }

 private:
  struct PrefixState {
    int prev = -1;  // -1 = begin of sequence
    int seps = 0;
    int after_sep = 0;

    void advance(int tok) {
      if (seps > 0) ++after_sep;
      if (tok == token::sep && seps == 0) after_sep = 0;
      if (tok == token::sep) ++seps;
      prev = tok;
    }
  };

  struct Workspace {
    explicit Workspace(const PolicyShape& s)
        : x(static_cast<std::size_t>(s.input_dim())),
          h(static_cast<std::size_t>(s.hidden)),
          logp(static_cast<std::size_t>(s.vocab)) {}
    std::vector<double> x, h, logp;
  };

  static char symbol_char(int tok) {
    if (tok == token::think) return '~';
    const int k = tok - token::first_symbol;
    return (k >= 0 && k < static_cast<int>(kSymbolChars.size())) ? kSymbolChars[static_cast<std::size_t>(k)] : '?';
  }

  std::span<const double> hidden_weights(const PolicyParams& p) const {
    return std::span<const double>(p.theta).subspan(shape_.embedding_size(), shape_.hidden_size());
  }
  std::span<const double> output_weights(const PolicyParams& p) const {
    return std::span<const double>(p.theta).subspan(shape_.embedding_size() + shape_.hidden_size(),
                                                    shape_.output_size());
  }

  void check_params(const PolicyParams& p) const {
    if (p.theta.size() != parameter_count()) throw ValidationError("policy: parameter vector has wrong size");
  }

  void check_tokens(const std::vector<int>& tokens) const {
    for (int tok : tokens) {
      if (tok < 0 || tok >= shape_.vocab) throw ValidationError("policy: unknown token " + std::to_string(tok));
    }
  }

  void forward(const PolicyParams& params, const SyntheticTask& task, PrefixState& state, double temperature,
               Workspace& ws) const {
    const auto F = static_cast<std::size_t>(shape_.feature_dim);
    const auto E = static_cast<std::size_t>(shape_.embed);
    const auto P = static_cast<std::size_t>(shape_.positions);
    const auto H = static_cast<std::size_t>(shape_.hidden);
    const auto V = static_cast<std::size_t>(shape_.vocab);
    const auto I = static_cast<std::size_t>(shape_.input_dim());
    if (state.prev < 0) state.prev = shape_.vocab;  // BOS embedding row

    std::fill(ws.x.begin(), ws.x.end(), 0.0);
    for (std::size_t i = 0; i < F && i < task.prompt_features.size(); ++i) ws.x[i] = task.prompt_features[i];
    const double* emb = params.theta.data() + static_cast<std::size_t>(state.prev) * E;
    for (std::size_t e = 0; e < E; ++e) ws.x[F + e] = emb[e];
    const std::size_t slot = state.seps == 0 ? 0 : std::min<std::size_t>(1 + static_cast<std::size_t>(state.after_sep), P - 1);
    ws.x[F + E + slot] = 1.0;
    ws.x[I - 1] = 1.0;

    const auto wh = hidden_weights(params);
    for (std::size_t j = 0; j < H; ++j) {
      const double* row = wh.data() + j * I;
      double a = 0.0;
      for (std::size_t i = 0; i < I; ++i) a += row[i] * ws.x[i];
      ws.h[j] = std::tanh(a);
    }
    const auto wo = output_weights(params);
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < V; ++k) {
      const double* row = wo.data() + k * (H + 1);
      double z = row[H];
      for (std::size_t j = 0; j < H; ++j) z += row[j] * ws.h[j];
      z /= temperature;
      if (!std::isfinite(z)) throw RuntimeAbort("policy: non-finite logits");
      ws.logp[k] = z;
      zmax = std::max(zmax, z);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < V; ++k) sum += std::exp(ws.logp[k] - zmax);
    const double lse = zmax + std::log(sum);
    for (std::size_t k = 0; k < V; ++k) ws.logp[k] -= lse;
  }

  PolicyShape shape_;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

struct SftPair {
  const SyntheticTask* task = nullptr;
  Completion target;
};

/// Mean over pairs of the mean per-token negative log-likelihood.
inline LossAndGrad sft_loss(const ToyPolicy& policy, const PolicyParams& params, std::span<const SftPair> pairs) {
  if (pairs.empty()) throw ValidationError("sft_loss: empty pair list");
  LossAndGrad out{0.0, std::vector<double>(policy.parameter_count(), 0.0)};
  const double pair_weight = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pair : pairs) {
    const auto& tokens = pair.target.tokens;
    if (tokens.empty()) throw ValidationError("sft_loss: empty target");
    const auto logp = policy.logprob(params, *pair.task, pair.target);
    const double w = pair_weight / static_cast<double>(tokens.size());
    LogDistributions dlogp(tokens.size(), std::vector<double>(static_cast<std::size_t>(policy.shape().vocab), 0.0));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      out.loss -= w * logp[t];
      dlogp[t][static_cast<std::size_t>(tokens[t])] = -w;
    }
    policy.accumulate_gradient(params, *pair.task, pair.target, dlogp, out.grad);
  }
  return out;
}

}  // namespace mathbook
