#pragma once

#include <string>
#include <vector>

#include "dmpc/diffusion.hpp"
#include "dmpc/float_file.hpp"
#include "dmpc/mlp.hpp"
#include "dmpc/rewards.hpp"
#include "dmpc/schedule.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError(ParseError::Kind::kMalformedHeader, "bad integer list: " + s);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline void put_mlp(FloatFile& f, const Mlp& net) {
  f.set("layers", join_ints(net.spec().layer_sizes));
  std::string acts;
  for (std::size_t i = 0; i < net.spec().activations.size(); ++i)
    acts += (i ? "," : "") + to_string(net.spec().activations[i]);
  f.set("activations", acts);
  for (std::size_t l = 0; l < net.params().weights.size(); ++l) {
    const auto& w = net.params().weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) f.payload.push_back(static_cast<float>(w(r, c)));
    for (Eigen::Index r = 0; r < net.params().biases[l].size(); ++r)
      f.payload.push_back(static_cast<float>(net.params().biases[l](r)));
  }
}

inline Mlp get_mlp(const FloatFile& f, PayloadReader& rd) {
  MlpSpec spec;
  spec.layer_sizes = split_ints(f.get("layers"));
  const std::string& acts = f.get("activations");
  std::size_t pos = 0;
  while (pos <= acts.size()) {
    const auto comma = acts.find(',', pos);
    try {
      spec.activations.push_back(
          activation_from_string(acts.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    } catch (const InvalidInput& e) {
      throw ParseError(ParseError::Kind::kMalformedHeader, e.what());
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  try {
    spec.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, e.what());
  }
  MlpParams p;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Eigen::MatrixXd w(spec.layer_sizes[l + 1], spec.layer_sizes[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rd.next();
    Eigen::VectorXd b(spec.layer_sizes[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = rd.next();
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return Mlp(std::move(spec), std::move(p));
}

inline void put_stats(FloatFile& f, const NormStats& st) {
  f.set("stat_rows", std::to_string(st.rows()));
  for (Eigen::Index r = 0; r < st.rows(); ++r) f.payload.push_back(static_cast<float>(st.mean(r)));
  for (Eigen::Index r = 0; r < st.rows(); ++r) f.payload.push_back(static_cast<float>(st.scale(r)));
}

inline NormStats get_stats(const FloatFile& f, PayloadReader& rd) {
  const long long rows = f.get_int("stat_rows");
  if (rows < 1) throw ParseError(ParseError::Kind::kMalformedHeader, "bad stat row count");
  NormStats st{Eigen::VectorXd(rows), Eigen::VectorXd(rows)};
  for (long long r = 0; r < rows; ++r) st.mean(r) = rd.next();
  for (long long r = 0; r < rows; ++r) st.scale(r) = rd.next();
  return st;
}

inline void finish(const PayloadReader& rd) {
  if (!rd.done()) throw ParseError(ParseError::Kind::kMalformedHeader, "payload longer than header implies");
}

}  // namespace detail

/// Rounds every parameter to float32 so a saved model reloads bit-identically.
inline void quantize_float32(MlpParams& p) {
  for (auto& w : p.weights) quantize_float32(w);
  for (auto& b : p.biases) quantize_float32(b);
  p.generation += 1;
}

struct PriorCheckpoint {
  Denoiser model;
  NoiseSchedule schedule;  // training schedule
  NormStats stats;
  int clean_prefix = 0;
};

inline void save_prior(const PriorCheckpoint& ck, const std::string& path) {
  FloatFile f;
  f.kind = "prior";
  f.set("state_dim", std::to_string(ck.model.state_dim()));
  f.set("action_dim", std::to_string(ck.model.action_dim()));
  f.set("horizon", std::to_string(ck.model.horizon()));
  f.set("embed_dim", std::to_string(ck.model.embed_dim()));
  f.set("train_steps", std::to_string(ck.schedule.train_steps));
  f.set("beta_start", format_double(ck.schedule.beta_start));
  f.set("beta_end", format_double(ck.schedule.beta_end));
  f.set("clean_prefix", std::to_string(ck.clean_prefix));
  detail::put_stats(f, ck.stats);
  detail::put_mlp(f, ck.model.net());
  write_float_file(path, f);
}

inline PriorCheckpoint load_prior(const std::string& path) {
  const FloatFile f = read_float_file(path, "prior");
  PayloadReader rd(f.payload);
  PriorCheckpoint ck;
  ck.stats = detail::get_stats(f, rd);
  Mlp net = detail::get_mlp(f, rd);
  detail::finish(rd);
  try {
    ck.model = Denoiser(static_cast<int>(f.get_int("state_dim")), static_cast<int>(f.get_int("action_dim")),
                        static_cast<int>(f.get_int("horizon")), std::move(net),
                        static_cast<int>(f.get_int("embed_dim")));
    ck.schedule =
        make_schedule(static_cast<int>(f.get_int("train_steps")), f.get_double("beta_start"), f.get_double("beta_end"));
    ck.stats.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, e.what());
  }
  ck.clean_prefix = static_cast<int>(f.get_int("clean_prefix"));
  return ck;
}

inline void save_reward_model(const RewardModel& m, const std::string& path) {
  FloatFile f;
  f.kind = "reward";
  f.set("state_dim", std::to_string(m.state_dim()));
  f.set("action_dim", std::to_string(m.action_dim()));
  f.set("horizon", std::to_string(m.horizon()));
  f.set("embed_dim", std::to_string(m.embed_dim()));
  f.set("label_mean", format_double(m.label_mean()));
  f.set("label_scale", format_double(m.label_scale()));
  f.set("trained", m.trained() ? "1" : "0");
  detail::put_stats(f, m.stats());
  detail::put_mlp(f, m.net());
  write_float_file(path, f);
}

inline RewardModel load_reward_model(const std::string& path) {
  const FloatFile f = read_float_file(path, "reward");
  PayloadReader rd(f.payload);
  NormStats st = detail::get_stats(f, rd);
  Mlp net = detail::get_mlp(f, rd);
  detail::finish(rd);
  try {
    RewardModel m(static_cast<int>(f.get_int("state_dim")), static_cast<int>(f.get_int("action_dim")),
                  static_cast<int>(f.get_int("horizon")), std::move(st), std::move(net), f.get_double("label_mean"),
                  f.get_double("label_scale"), static_cast<int>(f.get_int("embed_dim")));
    if (f.get("trained") == "1") m.mark_trained();
    return m;
  } catch (const InvalidInput& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, e.what());
  }
}

}  // namespace dmpc
