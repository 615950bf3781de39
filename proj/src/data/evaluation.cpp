#include "catdet/data/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "catdet/common/errors.hpp"

namespace catdet::data {

double evaluate_ap(std::span<const ImageResult> images, double iou_threshold) {
  std::size_t n_gt = 0;
  for (const auto& im : images) n_gt += im.gt.size();
  if (n_gt == 0) throw ContractError("evaluate_ap: no ground-truth boxes");

  struct Ranked {
    double score;
    std::size_t image, det;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t d = 0; d < images[i].dets.size(); ++d) ranked.push_back({images[i].dets[d].score, i, d});
  }
  if (ranked.empty()) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gt.size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& im = images[ranked[k].image];
    const Box& b = im.dets[ranked[k].det].box;
    double best = iou_threshold;
    std::ptrdiff_t match = -1;
    for (std::size_t g = 0; g < im.gt.size(); ++g) {
      if (used[ranked[k].image][g]) continue;
      const double o = iou(b, im.gt[g]);
      if (o >= best) {
        best = o;
        match = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (match >= 0) {
      used[ranked[k].image][static_cast<std::size_t>(match)] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }

  // Precision envelope, then sum over recall steps.
  for (std::size_t k = precision.size() - 1; k > 0; --k) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

double evaluate_coco_ap(std::span<const ImageResult> images) {
  double s = 0.0;
  for (int t = 0; t < 10; ++t) s += evaluate_ap(images, 0.5 + 0.05 * t);
  return s / 10.0;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
  return p;
}

ProtocolReport evaluation_protocol(const Dataset& ds, Split split, const DetectFn& detect,
                                   const ProtocolOptions& opt) {
  if (opt.n_queries == 0) throw ConfigError("n_queries must be at least 1");
  auto targets = ds.split(split);
  std::sort(targets.begin(), targets.end(),
            [](const OneShotSample* a, const OneShotSample* b) { return a->id < b->id; });
  if (targets.empty()) throw DataError("split " + std::string(split_name(split)) + " has no samples");

  std::map<int, std::vector<const OneShotSample*>> pools;  // by class, ordered by id
  for (const auto* t : targets) pools[t->query_class].push_back(t);

  struct Job {
    std::size_t target;
    std::size_t round;
    const Image* query;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& pool = pools.at(targets[i]->query_class);
    const auto perm = seeded_permutation(pool.size(), static_cast<std::uint64_t>(targets[i]->id));
    const std::size_t rounds = std::min(opt.n_queries, pool.size());
    for (std::size_t r = 0; r < rounds; ++r) jobs.push_back({i, r, &pool[perm[r]]->query});
  }

  std::vector<std::vector<Detection>> results(jobs.size());
  const std::size_t workers = std::clamp<std::size_t>(opt.workers, 1, std::max<std::size_t>(1, jobs.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      results[j] = detect(*targets[jobs[j].target], *jobs[j].query);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  // class -> round -> per-image results
  std::map<int, std::vector<std::vector<ImageResult>>> grouped;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto* t = targets[jobs[j].target];
    auto& rounds = grouped[t->query_class];
    if (rounds.size() <= jobs[j].round) rounds.resize(jobs[j].round + 1);
    rounds[jobs[j].round].push_back({std::move(results[j]), t->gt_boxes});
  }

  ProtocolReport rep;
  rep.split = split;
  rep.n_queries = opt.n_queries;
  for (auto& [cls, rounds] : grouped) {
    ClassMetrics m;
    m.class_id = cls;
    m.targets = pools.at(cls).size();
    m.rounds = rounds.size();
    for (const auto& r : rounds) {
      m.ap += evaluate_coco_ap(r);
      m.ap50 += evaluate_ap(r, 0.5);
    }
    m.ap /= static_cast<double>(m.rounds);
    m.ap50 /= static_cast<double>(m.rounds);
    if (m.rounds < opt.n_queries) {
      rep.notes.push_back("class " + std::to_string(cls) + " has " + std::to_string(m.rounds) +
                          " query candidates; averaged over all of them");
    }
    rep.mean_ap += m.ap;
    rep.mean_ap50 += m.ap50;
    rep.per_class.push_back(m);
  }
  rep.mean_ap /= static_cast<double>(rep.per_class.size());
  rep.mean_ap50 /= static_cast<double>(rep.per_class.size());
  return rep;
}

}  // namespace catdet::data
