#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kfv/eval_metrics.hpp"
#include "model_fixture.hpp"
#include "metric_instances.hpp"
#include "oracles.hpp"

using namespace kfv;

namespace {

using test::Instance;
using test::random_instance;
using test::rankings;

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::vector<EvalImage> one_image(std::vector<TripletIdx> gt, std::size_t objs = 3) {
  return {{"x", std::vector<int>(objs, 0), std::move(gt)}};
}

}  // namespace

TEST_SUITE("eval_metrics") {

TEST_CASE("ordered pairs are subject-major") {
  using P = std::pair<std::size_t, std::size_t>;
  CHECK(ordered_pairs(3) == std::vector<P>{{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}});
  CHECK(ordered_pairs(1).empty());
}

TEST_CASE("ranking combinatorics and ties") {
  const std::vector<Vec> two = {(Vec(4) << 0.1, 0.2, 0.3, 0.4).finished(), (Vec(4) << 0.3, 0.3, 0.1, 0.3).finished()};
  const auto r = rank_from_scores("a", 2, two);
  REQUIRE(r.size() == 6);
  CHECK(r[0].triplet == TripletIdx{0, 2, 1});
  CHECK(r[1].triplet == TripletIdx{1, 0, 0});
  CHECK(r[2].triplet == TripletIdx{1, 1, 0});
  CHECK(r[3].triplet == TripletIdx{0, 1, 1});
  for (const auto& p : r) CHECK(p.triplet.predicate != 3);
  CHECK(rank_from_scores("a", 1, {}).empty());
  CHECK(rank_from_scores("a", 0, {}).empty());
  const auto gc = rank_from_scores("a", 2, two, true);
  REQUIRE(gc.size() == 2);
  CHECK(gc[0].triplet == TripletIdx{0, 2, 1});
  CHECK(gc[1].triplet == TripletIdx{1, 0, 0});
}

TEST_CASE("ranking matches a brute-force sort") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng);
    for (std::size_t i = 0; i < in.images.size(); ++i) {
      auto cands = in.oracle_images[i].cands;
      std::sort(cands.begin(), cands.end(), [](const oracle::Cand& a, const oracle::Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.q != b.q ? a.q < b.q : a.p < b.p;
      });
      const auto got = rank_from_scores("x", in.images[i].object_classes.size(), in.scores[i]);
      REQUIRE(got.size() == cands.size());
      for (std::size_t c = 0; c < cands.size(); ++c) {
        CHECK(got[c].triplet == TripletIdx{cands[c].i, cands[c].p, cands[c].j});
        CHECK(got[c].score == cands[c].score);
      }
      // At most one predicate per pair, the best with lowest index on ties.
      std::vector<oracle::Cand> best;
      for (const auto& c : in.oracle_images[i].cands) {
        auto it = std::find_if(best.begin(), best.end(), [&](const oracle::Cand& b) { return b.q == c.q; });
        if (it == best.end()) best.push_back(c);
        else if (c.score > it->score) *it = c;
      }
      std::sort(best.begin(), best.end(), [](const oracle::Cand& a, const oracle::Cand& b) {
        return a.score != b.score ? a.score > b.score : a.q < b.q;
      });
      const auto gc = rank_from_scores("x", in.images[i].object_classes.size(), in.scores[i], true);
      REQUIRE(gc.size() == best.size());
      for (std::size_t c = 0; c < best.size(); ++c) CHECK(gc[c].triplet == TripletIdx{best[c].i, best[c].p, best[c].j});
    }
  }
}

TEST_CASE("model ranking uses fused scores of every ordered pair") {
  const auto m = test::small_model({}, 3);
  Rng rng(4);
  std::vector<ObjectDescriptor> objs = {test::random_object(0, 3, rng), test::random_object(1, 3, rng),
                                        test::random_object(2, 3, rng)};
  std::vector<Vec> scores;
  for (const auto& [i, j] : ordered_pairs(3)) scores.push_back(score_pair(m, objs[i], objs[j]).s);
  const auto want = rank_from_scores("x", 3, scores);
  const auto got = rank_image(m, "x", objs);
  REQUIRE(got.size() == 6 * 3);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(got[i].triplet == want[i].triplet);
    CHECK(got[i].score == want[i].score);
  }
  ImageRanker ranker(m);
  const auto cached = ranker.rank("x", objs);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(cached[i].score == want[i].score);
  CHECK(rank_image(m, "x", {objs[0]}).empty());
}

TEST_CASE("recall examples") {
  const std::vector<Vec> s = {(Vec(3) << 0.9, 0.1, 0).finished(), (Vec(3) << 0.2, 0.8, 0).finished(),
                              (Vec(3) << 0.5, 0.5, 0).finished(), (Vec(3) << 0.3, 0.3, 0).finished(),
                              (Vec(3) << 0.1, 0.4, 0).finished(), (Vec(3) << 0.6, 0.3, 0).finished()};
  const std::vector<std::vector<RankedPrediction>> preds = {rank_from_scores("x", 3, s)};
  // Top entries: (0,1) p0 0.9, (0,2) p1 0.8, (2,1) p0 0.6, ...
  CHECK(recall_at_k(preds, one_image({{0, 0, 1}, {0, 1, 2}}), 2) == 1.0);
  CHECK(recall_at_k(preds, one_image({{2, 1, 0}}), 3) == 0.0);
  CHECK(recall_at_k(preds, one_image({{0, 0, 1}, {2, 1, 0}}), 1) == 0.5);
  Warnings w;
  CHECK(std::isnan(recall_at_k(preds, one_image({}), 5, &w)));
  CHECK(!w.empty());

  CHECK(mean_recall_at_k(preds, one_image({{0, 0, 1}, {2, 0, 1}}), 1, 2) ==
        recall_at_k(preds, one_image({{0, 0, 1}, {2, 0, 1}}), 1));
  CHECK(mean_recall_at_k(preds, one_image({{0, 0, 1}, {2, 1, 0}}), 1, 2) == 0.5);
  // Three predicates with per-predicate recalls 1/2, 1, 0 at k = 3.
  const std::vector<Vec> s3 = {(Vec(4) << 0.9, 0.1, 0.0, 0).finished(), (Vec(4) << 0.2, 0.8, 0.0, 0).finished(),
                               (Vec(4) << 0.0, 0.0, 0.1, 0).finished(), (Vec(4) << 0.7, 0.0, 0.0, 0).finished(),
                               (Vec(4) << 0.0, 0.0, 0.0, 0).finished(), (Vec(4) << 0.0, 0.0, 0.0, 0).finished()};
  const std::vector<std::vector<RankedPrediction>> p3 = {rank_from_scores("x", 3, s3)};
  const auto gt3 = one_image({{0, 0, 1}, {2, 0, 1}, {0, 1, 2}, {0, 2, 2}});
  CHECK(std::abs(mean_recall_at_k(p3, gt3, 3, 3) - (0.5 + 1.0 + 0.0) / 3.0) < 1e-15);
  CHECK(mean_recall_at_k(p3, one_image({{0, 0, 1}}), 3, 3) == 1.0);
}

TEST_CASE("seen and unseen examples") {
  const std::vector<Vec> s = {(Vec(2) << 0.9, 0).finished(), (Vec(2) << 0.8, 0).finished()};
  const std::vector<std::vector<RankedPrediction>> preds = {rank_from_scores("x", 2, s)};
  std::vector<EvalImage> imgs = {{"x", {0, 1}, {{0, 0, 1}, {1, 0, 0}}}};
  SeenSets all;
  all.add(0, 0, 1);
  all.add(1, 0, 0);
  Warnings w;
  CHECK(std::isnan(seen_unseen_recall(preds, imgs, all, SeenMode::Pair, Subset::Unseen, 1, &w)));
  CHECK(!w.empty());
  CHECK(seen_unseen_recall(preds, imgs, all, SeenMode::Pair, Subset::Seen, 1) == recall_at_k(preds, imgs, 1));
  SeenSets none;
  for (std::size_t k : {1, 2})
    CHECK(seen_unseen_recall(preds, imgs, none, SeenMode::Pair, Subset::Unseen, k) == recall_at_k(preds, imgs, k));

  // Four GT triplets, two of them on seen pairs.
  const std::vector<Vec> s4 = {(Vec(3) << 0.9, 0.0, 0).finished(), (Vec(3) << 0.1, 0.7, 0).finished(),
                               (Vec(3) << 0.2, 0.0, 0).finished(), (Vec(3) << 0.0, 0.8, 0).finished(),
                               (Vec(3) << 0.0, 0.0, 0).finished(), (Vec(3) << 0.0, 0.0, 0).finished()};
  const std::vector<std::vector<RankedPrediction>> p4 = {rank_from_scores("x", 3, s4)};
  std::vector<EvalImage> img4 = {{"x", {0, 1, 2}, {{0, 0, 1}, {0, 1, 2}, {1, 1, 2}, {0, 0, 2}}}};
  SeenSets seen;
  seen.add(0, 0, 1);
  seen.add(1, 0, 2);
  // Top 2: (0,1) p0, (1,2) p1. Seen pairs hold (0,0,1) hit and (1,1,2) hit.
  CHECK(seen_unseen_recall(p4, img4, seen, SeenMode::Pair, Subset::Seen, 2) == 1.0);
  CHECK(seen_unseen_recall(p4, img4, seen, SeenMode::Pair, Subset::Unseen, 2) == 0.0);
  // Triplet mode: only (0,0,1) is a seen class triplet.
  CHECK(seen_unseen_recall(p4, img4, seen, SeenMode::Triplet, Subset::Seen, 2) == 1.0);
  CHECK(std::abs(seen_unseen_recall(p4, img4, seen, SeenMode::Triplet, Subset::Unseen, 2) - 1.0 / 3.0) < 1e-15);
  CHECK(is_seen(seen, SeenMode::Pair, 1, 7, 2));
  CHECK(!is_seen(seen, SeenMode::Triplet, 1, 7, 2));
}

TEST_CASE("metrics equal exhaustive recomputation") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = random_instance(rng);
    for (std::size_t k : {1, 2, 3, 5, 8, 20, 100}) {
      const auto bad = test::metric_mismatches(in, k);
      CHECK_MESSAGE(bad.empty(), "trial " << trial << " k " << k << ": " << (bad.empty() ? std::string() : bad.front()));
    }
  }
}

TEST_CASE("seen and unseen counts decompose the total") {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const auto in = random_instance(rng);
    const auto preds = rankings(in);
    for (std::size_t k = 1; k <= 12; ++k) {
      const auto all = recall_counts(preds, in.images, k);
      for (auto mode : {SeenMode::Pair, SeenMode::Triplet}) {
        const auto s = seen_unseen_counts(preds, in.images, in.seen, mode, Subset::Seen, k);
        const auto u = seen_unseen_counts(preds, in.images, in.seen, mode, Subset::Unseen, k);
        CHECK(s.recalled + u.recalled == all.recalled);
        CHECK(s.total + u.total == all.total);
      }
    }
  }
}

TEST_CASE("recalls are bounded and non-decreasing in k") {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const auto in = random_instance(rng);
    const auto preds = rankings(in);
    double prev_r = -1, prev_s = -1, prev_u = -1;
    for (std::size_t k = 1; k <= 40; ++k) {
      const double r = recall_at_k(preds, in.images, k);
      const double s = seen_unseen_recall(preds, in.images, in.seen, SeenMode::Pair, Subset::Seen, k);
      const double u = seen_unseen_recall(preds, in.images, in.seen, SeenMode::Triplet, Subset::Unseen, k);
      for (double v : {r, s, u}) CHECK((std::isnan(v) || (v >= 0 && v <= 1)));
      if (!std::isnan(r)) {
        CHECK(r >= prev_r);
        prev_r = r;
      }
      if (!std::isnan(s)) {
        CHECK(s >= prev_s);
        prev_s = s;
      }
      if (!std::isnan(u)) {
        CHECK(u >= prev_u);
        prev_u = u;
      }
    }
  }
}

TEST_CASE("ground truth from records") {
  DatasetRecord r;
  r.image_id = "a";
  for (int c = 0; c < 3; ++c) r.objects.push_back({Box{}, "x", c, "", Vec::Zero(1)});
  r.relations = {{0, "on", 1}, {1, "near", 2}, {2, "under", 0}};
  const auto imgs = eval_images({r}, CandidateSet::from_relations({"near", "on"}));
  REQUIRE(imgs.size() == 1);
  CHECK(imgs[0].object_classes == std::vector<int>{0, 1, 2});
  CHECK(imgs[0].gt.size() == 2);
  CHECK(std::count(imgs[0].gt.begin(), imgs[0].gt.end(), TripletIdx{0, 1, 1}) == 1);
  CHECK(std::count(imgs[0].gt.begin(), imgs[0].gt.end(), TripletIdx{1, 0, 2}) == 1);
}

TEST_CASE("report json and text") {
  Rng rng(10);
  const auto in = random_instance(rng);
  const auto preds = rankings(in);
  auto rep = compute_report(preds, in.images, SeenSets{}, in.n_predicates);
  CHECK(rep.images == in.images.size());
  for (std::size_t k : kReportKs) {
    CHECK(same(rep.recall[k], recall_at_k(preds, in.images, k)));
    CHECK(std::isnan(rep.seen_pair[k]));
  }
  const auto j = rep.to_json();
  CHECK(j["seen"]["pair"]["20"].is_null());
  const auto back = MetricsReport::from_json(j);
  CHECK(back.to_json() == j);
  const std::string text = rep.to_text();
  CHECK(text.find("psR") != std::string::npos);
  CHECK(text.find("\n 20 ") != std::string::npos);
}

}
