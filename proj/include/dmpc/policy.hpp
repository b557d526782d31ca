#pragma once

#include <memory>

#include "dmpc/checkpoint.hpp"
#include "dmpc/executor.hpp"
#include "dmpc/planner.hpp"

namespace dmpc {

/// Planner callback over a prior. The checkpoint is held by reference so a
/// model updated in place (finetuning) is picked up by later replans.
inline PlanFn make_plan_fn(const PriorCheckpoint& prior, PlannerConfig config) {
  auto sched = std::make_shared<NoiseSchedule>(respace(prior.schedule, config.inference_steps));
  return [&prior, config = std::move(config), sched](const PlanRequest& req) {
    PlannerConfig cfg = config;
    if (req.warm && req.warm->start_level > cfg.inference_steps) throw InvalidInput("warm start above the chain");
    const int n_s = prior.model.state_dim(), n_a = prior.model.action_dim();
    const PlanResult r = guided_sample(prior.model, *sched, cfg, prior.stats, n_s, n_a, prior.model.horizon(),
                                       req.observation, req.seed, req.warm);
    PlanOutput out;
    out.plan = r.best.data();
    out.clean_normalized = normalize_matrix(out.plan, prior.stats);
    out.reverse_steps = r.diagnostics.reverse_steps;
    out.action_dim = n_a;
    return out;
  };
}

}  // namespace dmpc
