#include <gtest/gtest.h>

#include "dmpc/run_config.hpp"

namespace dmpc {
namespace {

TEST(Config, ParsesSectionsAndComments) {
  Config c = Config::parse("# comment\nplanner.candidates = 10\n\n seed=7 \nadapt.candidates = 1, 10,100\n");
  EXPECT_EQ(c.get_int("planner.candidates", 1), 10);
  EXPECT_EQ(c.get_u64("seed", 0), 7u);
  EXPECT_EQ(c.get_ints("adapt.candidates", {}), (std::vector<int>{1, 10, 100}));
  EXPECT_DOUBLE_EQ(c.get_double("planner.lambda", 0.25), 0.25);
  EXPECT_NO_THROW(c.reject_unknown());
}

TEST(Config, RejectsUnknownAndMalformed) {
  Config c = Config::parse("planner.candidtes = 10\n");
  (void)c.get_int("planner.candidates", 1);
  EXPECT_THROW(c.reject_unknown(), ConfigError);
  EXPECT_THROW(Config::parse("no equals sign\n"), ConfigError);
  EXPECT_THROW(Config::parse("a = 1\na = 2\n"), ConfigError);
  Config bad = Config::parse("x = 1.5z\nflag = maybe\n");
  EXPECT_THROW((void)bad.get_double("x", 0.0), ConfigError);
  EXPECT_THROW((void)bad.get_bool("flag", false), ConfigError);
  EXPECT_THROW((void)Config::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, OverridesWinAndHashTracksValues) {
  Config a = Config::parse("planner.lambda = 0.5\n");
  a.set_assignment("planner.lambda=2");
  EXPECT_DOUBLE_EQ(a.get_double("planner.lambda", 0.0), 2.0);
  Config b = Config::parse("planner.lambda = 2.0\n");
  (void)b.get_double("planner.lambda", 0.0);
  // Same effective value, same hash, regardless of spelling.
  EXPECT_EQ(a.hash(), b.hash());
  Config d;
  (void)d.get_double("planner.lambda", 3.0);
  EXPECT_NE(a.hash(), d.hash());
  EXPECT_EQ(d.resolved(), "planner.lambda = 3\n");
}

TEST(Config, EmptyConfigReproducesDefaults) {
  Config c;
  const AdaptationConfig a = adaptation_config(c);
  const AdaptationConfig def;
  EXPECT_EQ(a.seeds, def.seeds);
  EXPECT_EQ(a.candidates, def.candidates);
  EXPECT_EQ(a.objectives, def.objectives);
  EXPECT_EQ(a.lambda, def.lambda);
  const FinetuneConfig f = finetune_config(c);
  EXPECT_EQ(f.train.iterations, FinetuneConfig{}.train.iterations);
  EXPECT_EQ(f.train.executor.margin, 3);
  EXPECT_EQ(f.train.executor.cached_steps, 0);
  const PriorConfig p = prior_config(c);
  EXPECT_EQ(p.hidden, PriorConfig{}.hidden);
  EXPECT_NO_THROW(c.reject_unknown());
}

TEST(Config, EnumValuesValidated) {
  Config c = Config::parse("planner.sampler = ddim\nprior.activation = sigmoid\nadapt.objectives = joint_vel,foo\n");
  EXPECT_EQ(planner_config(c).sampler, Sampler::kDdim);
  EXPECT_THROW((void)prior_config(c), ConfigError);
  EXPECT_THROW((void)adaptation_config(c), ConfigError);
}

TEST(Hash, Fnv1aReferenceValues) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

}  // namespace
}  // namespace dmpc
