#pragma once

#include <string>

#include "dmpc/float_file.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

/// Writes the dataset as header + float32 payload (stats, then each segment
/// row-major). Values are stored as float32; datasets built by make_dataset
/// are already float32-exact so the round trip is bit-exact.
inline void save_dataset(const TrajectoryDataset& ds, const std::string& path) {
  ds.validate();
  FloatFile f;
  f.kind = "dataset";
  f.set("fields", "mean,scale,segments");
  f.set("state_dim", std::to_string(ds.meta.state_dim));
  f.set("action_dim", std::to_string(ds.meta.action_dim));
  f.set("horizon", std::to_string(ds.meta.horizon));
  f.set("dt", format_double(ds.meta.dt));
  f.set("source", ds.meta.source.empty() ? "-" : ds.meta.source);
  f.set("count", std::to_string(ds.segments.size()));

  const int rows = ds.rows();
  f.payload.reserve(static_cast<std::size_t>(2 * rows + ds.segments.size() * rows * ds.meta.horizon));
  for (int r = 0; r < rows; ++r) f.payload.push_back(static_cast<float>(ds.stats.mean(r)));
  for (int r = 0; r < rows; ++r) f.payload.push_back(static_cast<float>(ds.stats.scale(r)));
  for (const auto& seg : ds.segments)
    for (int r = 0; r < rows; ++r)
      for (int t = 0; t < ds.meta.horizon; ++t) f.payload.push_back(static_cast<float>(seg.data()(r, t)));
  write_float_file(path, f);
}

inline TrajectoryDataset load_dataset(const std::string& path) {
  const FloatFile f = read_float_file(path, "dataset");
  TrajectoryDataset ds;
  ds.meta.state_dim = static_cast<int>(f.get_int("state_dim"));
  ds.meta.action_dim = static_cast<int>(f.get_int("action_dim"));
  ds.meta.horizon = static_cast<int>(f.get_int("horizon"));
  ds.meta.dt = f.get_double("dt");
  ds.meta.source = f.get("source");
  if (ds.meta.source == "-") ds.meta.source.clear();
  const long long count = f.get_int("count");
  if (ds.meta.state_dim < 0 || ds.meta.action_dim < 1 || ds.meta.horizon < 1 || count < 0)
    throw ParseError(ParseError::Kind::kMalformedHeader, "invalid dataset dimensions");

  const int rows = ds.rows();
  const long long expected = 2LL * rows + count * rows * ds.meta.horizon;
  if (static_cast<long long>(f.payload.size()) < expected)
    throw ParseError(ParseError::Kind::kTruncated, "dataset payload truncated");
  if (static_cast<long long>(f.payload.size()) > expected)
    throw ParseError(ParseError::Kind::kMalformedHeader, "dataset payload longer than header implies");

  PayloadReader rd(f.payload);
  ds.stats.mean.resize(rows);
  ds.stats.scale.resize(rows);
  for (int r = 0; r < rows; ++r) ds.stats.mean(r) = rd.next();
  for (int r = 0; r < rows; ++r) ds.stats.scale(r) = rd.next();
  ds.segments.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    Trajectory seg(ds.meta.state_dim, ds.meta.action_dim, ds.meta.horizon);
    for (int r = 0; r < rows; ++r)
      for (int t = 0; t < ds.meta.horizon; ++t) seg.data()(r, t) = rd.next();
    ds.segments.push_back(std::move(seg));
  }
  try {
    ds.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, e.what());
  }
  return ds;
}

}  // namespace dmpc
