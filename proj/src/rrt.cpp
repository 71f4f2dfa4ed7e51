#include "bnmf/rrt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace bnmf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

bool feasible_node(const RrtNode& node, const RrtTree& tree) {
  if (tree.gaussian) return node.quality >= tree.quality_threshold;
  if (!std::isfinite(node.quality)) return false;
  return tree.min_wad(node.profile) >= tree.min_angle_deg;
}

RrtNode node_from_fit(const Factorization& fit, const SvdPair& svd,
                      const Matrix& X, const ModelSpec& spec, NodeKind kind) {
  ObliquePoint q = factorization_to_q(fit, svd);
  Factorization F = fit;
  if (spec.is_gaussian()) F = optimize_scale(fit, spec).rescaled;
  const double quality = log_joint(X, F, spec);
  WadProfile prof = wad_profile(F);
  return RrtNode{std::move(q), std::move(F), quality, kind, std::move(prof)};
}

std::size_t worst_node(const RrtTree& tree) {
  std::size_t w = 0;
  for (std::size_t i = 1; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].quality < tree.nodes[w].quality) w = i;
  return w;
}

double best_quality(const RrtTree& tree) {
  double b = -kInf;
  for (const auto& n : tree.nodes) b = std::max(b, n.quality);
  return b;
}

}  // namespace

void RrtConfig::validate() const {
  if (!(s0 > 0.0)) throw std::invalid_argument("rrt.s0 must be > 0");
  if (!(growth > 1.0)) throw std::invalid_argument("rrt.growth must be > 1");
  if (max_extend_steps <= 0) throw std::invalid_argument("rrt.max_extend_steps must be > 0");
  if (max_temp_nodes && *max_temp_nodes == 0)
    throw std::invalid_argument("rrt.max_temp_nodes must be > 0");
  if (!(min_angle_deg > 0.0)) throw std::invalid_argument("rrt.min_angle_deg must be > 0");
  if (!(min_angle_increment > 0.0))
    throw std::invalid_argument("rrt.min_angle_increment must be > 0");
  if (max_onvi_components == 0) throw std::invalid_argument("rrt.max_onvi_components must be > 0");
  if (max_failed_attempts == 0) throw std::invalid_argument("rrt.max_failed_attempts must be > 0");
  if (n_init_restarts && *n_init_restarts <= 0)
    throw std::invalid_argument("rrt.n_init_restarts must be > 0");
}

std::size_t RrtTree::count(NodeKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      nodes.begin(), nodes.end(), [&](const RrtNode& n) { return n.kind == kind; }));
}

std::size_t RrtTree::nearest(const ObliquePoint& q) const {
  if (nodes.empty()) throw std::logic_error("nearest: empty tree");
  std::size_t best = 0;
  double best_d = kInf;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double d = distance(nodes[i].q, q);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

double RrtTree::min_wad(const WadProfile& candidate) const {
  double m = kInf;
  for (const auto& n : nodes) m = std::min(m, wad(candidate, n.profile));
  return m;
}

bool feasible(const Factorization& candidate, double quality, const RrtTree& tree) {
  if (tree.gaussian) return quality >= tree.quality_threshold;
  if (!std::isfinite(quality)) return false;
  return tree.min_wad(wad_profile(candidate)) >= tree.min_angle_deg;
}

ExtendOutcome extend_toward(const ObliquePoint& from, const ObliquePoint& target,
                            const RrtConfig& config,
                            const std::function<bool(const ObliquePoint&)>& accept) {
  ExtendOutcome out;
  ObliquePoint current = from;
  double s = config.s0;
  for (int k = 0; k < config.max_extend_steps; ++k, s *= config.growth) {
    std::optional<ObliquePoint> next;
    try {
      next = step(current, target, s);
    } catch (const NumericalError&) {
      break;
    }
    if (distance(*next, current) <= 1e-14) break;
    if (!accept(*next)) break;
    current = std::move(*next);
    ++out.steps;
  }
  out.advanced = out.steps > 0;
  if (out.advanced) out.q = std::move(current);
  return out;
}

std::optional<RrtNode> make_node(const ObliquePoint& q, const RrtContext& ctx,
                                 NodeKind kind) {
  try {
    Factorization F = q_to_factorization(q, ctx.svd);
    if (ctx.spec.is_gaussian()) F = optimize_scale(F, ctx.spec).rescaled;
    const double quality = log_joint(ctx.X, F, ctx.spec);
    WadProfile prof = wad_profile(F);
    return RrtNode{q, std::move(F), quality, kind, std::move(prof)};
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

ExtendResult extend(const RrtTree& tree, const ObliquePoint& target,
                    const RrtContext& ctx) {
  ExtendResult res;
  res.nearest = tree.nearest(target);
  std::optional<RrtNode> last;
  const ExtendOutcome out = extend_toward(
      tree.nodes[res.nearest].q, target, ctx.config, [&](const ObliquePoint& q) {
        auto node = make_node(q, ctx, NodeKind::temporary);
        if (!node || !feasible_node(*node, tree)) return false;
        last = std::move(node);
        return true;
      });
  res.advanced = out.advanced;
  res.steps = out.steps;
  if (out.advanced) res.node = std::move(last);
  return res;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::max_components: return "max_components";
    case Termination::max_failed_attempts: return "max_failed_attempts";
    case Termination::max_extends: return "max_extends";
    case Termination::no_base_nodes: return "no_base_nodes";
  }
  return "unknown";
}

RrtReport explore(const Matrix& X, const ModelSpec& spec, const RrtConfig& config,
                  ProposalSink& sink, std::vector<Factorization> initial,
                  RrtTree* final_tree) {
  config.validate();
  spec.validate();
  const bool gaussian = spec.is_gaussian();
  const SvdPair svd = truncated_svd(X, spec.R);
  const RrtContext ctx{X, spec, svd, config};
  if (initial.empty())
    initial = lin_restarts(X, spec.R, config.restarts(gaussian), config.seed, config.lin);

  RrtTree tree;
  tree.gaussian = gaussian;
  tree.min_angle_deg = config.min_angle_deg;
  RrtReport rep;
  const NodeKind init_kind = gaussian ? NodeKind::temporary : NodeKind::base;
  for (const auto& fit : initial) {
    try {
      RrtNode node = node_from_fit(fit, svd, X, spec, init_kind);
      if (!gaussian && !std::isfinite(node.quality)) continue;
      tree.nodes.push_back(std::move(node));
    } catch (const NumericalError&) {
    }
  }
  auto finish = [&](Termination t) {
    rep.termination = t;
    rep.final_threshold = tree.quality_threshold;
    rep.final_min_angle = tree.min_angle_deg;
    rep.final_nodes = tree.nodes.size();
    rep.final_base_nodes = tree.count(NodeKind::base);
    if (final_tree) *final_tree = tree;
    return rep;
  };
  if (tree.nodes.empty()) return finish(Termination::no_base_nodes);

  auto record = [&](std::size_t ext, const RrtNode& node, double wad_near,
                    bool accepted) {
    ++rep.proposed;
    if (accepted) ++rep.accepted;
    rep.proposals.push_back({ext, node.quality, wad_near, accepted});
  };
  auto wad_to_others = [&](std::size_t self) {
    double m = kInf;
    for (std::size_t j = 0; j < tree.nodes.size(); ++j)
      if (j != self) m = std::min(m, wad(tree.nodes[self].profile, tree.nodes[j].profile));
    return m;
  };

  const std::size_t cap = config.temp_cap(gaussian);
  bool raised = false;
  if (gaussian) {
    tree.quality_threshold = kInf;
    for (const auto& n : tree.nodes) tree.quality_threshold = std::min(tree.quality_threshold, n.quality);
    std::size_t best = 0;
    for (std::size_t i = 1; i < tree.nodes.size(); ++i)
      if (tree.nodes[i].quality > tree.nodes[best].quality) best = i;
    const NviResult fit = nvi_fit(X, spec, {tree.nodes[best].factorization}, config.nvi);
    const Factorization opt = decode(fit.mixture.components.front().mu, spec.D, spec.N, spec.R);
    RrtNode proposal{tree.nodes[best].q, opt, log_joint(X, opt, spec), NodeKind::temporary,
                     wad_profile(opt)};
    const double wn = wad(proposal.profile, tree.nodes[best].profile);
    record(0, proposal, wn, sink.propose(opt));
  } else {
    const std::size_t n_base = config.propose_base_nodes ? tree.nodes.size() : 1;
    for (std::size_t i = 0; i < n_base; ++i) {
      if (sink.processed() >= config.max_onvi_components) break;
      record(0, tree.nodes[i], wad_to_others(i), sink.propose(tree.nodes[i].factorization));
    }
  }

  std::mt19937_64 rng(config.seed);
  std::size_t failures = 0;
  while (true) {
    if (sink.processed() >= config.max_onvi_components)
      return finish(Termination::max_components);
    if (failures >= config.max_failed_attempts)
      return finish(Termination::max_failed_attempts);
    if (config.max_extends > 0 && rep.extends >= config.max_extends)
      return finish(Termination::max_extends);

    const ObliquePoint target = sample_uniform(spec.R, rng);
    ExtendResult res = extend(tree, target, ctx);
    ++rep.extends;
    if (!res.advanced) {
      ++failures;
      continue;
    }
    failures = 0;
    ++rep.advanced;
    RrtNode node = std::move(*res.node);
    const double wn = wad(node.profile, tree.nodes[res.nearest].profile);
    const Factorization candidate = node.factorization;
    const double quality = node.quality;

    std::size_t slot = tree.nodes.size();
    if (gaussian && tree.nodes.size() >= cap) {
      slot = worst_node(tree);
      tree.nodes[slot] = std::move(node);
    } else {
      tree.nodes.push_back(std::move(node));
    }
    if (gaussian && !raised && tree.nodes.size() >= cap) {
      raised = true;
      tree.quality_threshold = best_quality(tree);
      if (config.threshold_referent == ThresholdReferent::best_component) {
        if (const auto* onvi = dynamic_cast<const OnviSink*>(&sink)) {
          double b = -kInf;
          for (const auto& c : onvi->mixture().components)
            b = std::max(b, onvi->density().value(c.mu));
          if (std::isfinite(b)) tree.quality_threshold = b;
        }
      }
    }

    const bool accepted = sink.propose(candidate);
    rep.proposals.push_back({rep.extends, quality, wn, accepted});
    ++rep.proposed;
    if (accepted) ++rep.accepted;

    if (!gaussian) {
      if (accepted) tree.nodes[slot].kind = NodeKind::base;
      if (tree.count(NodeKind::temporary) >= cap) {
        std::erase_if(tree.nodes, [](const RrtNode& n) { return n.kind == NodeKind::temporary; });
        tree.min_angle_deg += config.min_angle_increment;
        ++rep.restarts;
      }
    }
  }
}

void write_rrt_log(std::ostream& os, const RrtReport& report) {
  os << "extend_index,quality,wad_to_nearest,accepted\n";
  const auto old = os.precision(17);
  for (const auto& p : report.proposals)
    os << p.extend_index << ',' << p.quality << ',' << p.wad_to_nearest << ','
       << (p.accepted ? 1 : 0) << '\n';
  os.precision(old);
}

}  // namespace bnmf
