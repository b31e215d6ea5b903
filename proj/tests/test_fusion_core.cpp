#include <doctest.h>

#include <numeric>

#include "golden.hpp"
#include "grad_check.hpp"
#include "model_fixture.hpp"

using namespace kfv;

namespace {

Vec oracle_softmax(const Vec& z) {
  double mx = z[0];
  for (Eigen::Index i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
  Vec e(z.size());
  double sum = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - mx);
  return e / sum;
}

}  // namespace

TEST_SUITE("fusion_core") {

TEST_CASE("candidate set") {
  const auto c = CandidateSet::from_relations({"on", "near"});
  CHECK(c.size() == 3);
  CHECK(c.name(c.no_relation_index()) == kNoRelation);
  CHECK(c.index_of("near") == 1u);
  CHECK(!c.index_of("under"));
  CHECK_THROWS_AS(CandidateSet::from_relations({"on", "on"}), ConfigError);
  CHECK_THROWS_AS(CandidateSet::from_relations({}), ConfigError);
  CHECK_THROWS_AS(CandidateSet::from_relations({std::string(kNoRelation)}), ConfigError);
}

TEST_CASE("box validation") {
  CHECK_NOTHROW(Box{0, 0, 1, 1}.validate());
  CHECK_THROWS_AS((Box{0.5, 0, 0.5, 1}.validate()), ContractViolation);
  CHECK_THROWS_AS((Box{0, 0.2, 1, 0.1}.validate()), ContractViolation);
  CHECK_THROWS_AS((Box{-0.1, 0, 1, 1}.validate()), ContractViolation);
  CHECK_THROWS_AS((Box{0, 0, 1, 1.5}.validate()), ContractViolation);
}

TEST_CASE("pair encoding") {
  Rng rng(1);
  const auto s = test::random_object(0, 3, rng), o = test::random_object(1, 3, rng);
  const int in = 2 * (3 + 4);
  Vec c(5);
  c << 1, 2, 3, 4, 5;
  CHECK(encode_pair(s, o, {Mat::Zero(5, in), c}) == c);

  Vec concat(in);
  concat << s.raw_feature, s.box.x1, s.box.y1, s.box.x2, s.box.y2, o.raw_feature, o.box.x1, o.box.y1, o.box.x2,
      o.box.y2;
  CHECK(encode_pair(s, o, {Mat::Identity(in, in), Vec::Zero(in)}) == concat);
  CHECK(pair_input(s, o) == concat);

  PairEncoder r{rng.normal_matrix(6, in, 1), rng.normal_matrix(6, 1, 1).col(0)};
  const Vec got = encode_pair(s, o, r);
  for (int i = 0; i < 6; ++i) {
    double acc = r.b[i];
    for (int j = 0; j < in; ++j) acc += r.W(i, j) * concat[j];
    CHECK(std::abs(got[i] - acc) < 1e-12);
  }
  auto bad = o;
  bad.raw_feature = Vec::Zero(4);
  CHECK_THROWS_AS(encode_pair(s, bad, r), ContractViolation);
}

TEST_CASE("metric scores") {
  Vec v(2);
  v << 1, 1;
  std::vector<Vec> reps = {v, (Vec(2) << 1, -1).finished(), (Vec(2) << 1, 0).finished()};
  const Vec s = metric_scores(v, reps, MetricPolarity::Similarity);
  CHECK(std::abs(s[0] - 1) < 1e-15);
  CHECK(std::abs(s[1]) < 1e-15);
  CHECK(std::abs(s[2] - 1 / std::sqrt(2.0)) < 1e-15);
  const Vec d = metric_scores(v, reps, MetricPolarity::Distance);
  CHECK((d - (Vec::Ones(3) - s)).norm() < 1e-15);

  MetricDiagnostics diag;
  reps.push_back(Vec::Zero(2));
  const Vec z = metric_scores(v, reps, MetricPolarity::Similarity, &diag);
  CHECK(z[3] == 0.0);
  CHECK(diag.zero_norm == 1);
  MetricDiagnostics all;
  CHECK(metric_scores(Vec::Zero(2), reps, MetricPolarity::Similarity, &all) == Vec::Zero(4));
  CHECK(all.zero_norm == 4);
  CHECK_THROWS_AS(metric_scores(Vec::Zero(3), reps, MetricPolarity::Similarity), ContractViolation);
  CHECK(parse_metric_polarity("distance") == MetricPolarity::Distance);
  CHECK_THROWS_AS(parse_metric_polarity("euclid"), ConfigError);
}

TEST_CASE("cosine scores ignore the scale of the pair feature") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec v = rng.normal_matrix(5, 1, 1).col(0);
    std::vector<Vec> reps;
    for (int k = 0; k < 4; ++k) reps.push_back(rng.normal_matrix(5, 1, 1).col(0));
    const Vec base = metric_scores(v, reps, MetricPolarity::Similarity);
    for (double lambda : {0.25, 2.0, 1024.0}) CHECK(metric_scores(lambda * v, reps, MetricPolarity::Similarity) == base);
    const double lambda = 0.01 + 10 * rng.uniform();
    const Vec scaled = metric_scores(lambda * v, reps, MetricPolarity::Similarity);
    CHECK((scaled - base).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK(predict(scaled) == predict(base));
  }
}

TEST_CASE("fusion") {
  Rng rng(3);
  const int n = 4;
  const Vec sv = rng.normal_matrix(n, 1, 1).col(0), st = rng.normal_matrix(n, 1, 1).col(0);
  FusionHead sel{Mat::Zero(n, 2 * n), Vec::Zero(n)};
  sel.W.leftCols(n).setIdentity();
  CHECK((fuse(sv, st, sel) - oracle_softmax(sv)).norm() < 1e-15);
  CHECK((fuse(sv, st, {Mat::Zero(n, 2 * n), Vec::Zero(n)}) - Vec::Constant(n, 0.25)).norm() < 1e-15);

  FusionHead r{rng.normal_matrix(n, 2 * n, 1), rng.normal_matrix(n, 1, 1).col(0)};
  Vec z(n);
  for (int i = 0; i < n; ++i) {
    z[i] = r.b[i];
    for (int j = 0; j < n; ++j) z[i] += r.W(i, j) * sv[j] + r.W(i, n + j) * st[j];
  }
  CHECK((fuse(sv, st, r) - oracle_softmax(z)).norm() < 1e-14);
  CHECK_THROWS_AS(fuse(sv, Vec::Zero(3), r), ContractViolation);
  CHECK_THROWS_AS(fuse(Vec::Zero(3), Vec::Zero(3), r), ContractViolation);
}

TEST_CASE("softmax is a strictly positive distribution") {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec s = softmax(rng.normal_matrix(1 + static_cast<Eigen::Index>(rng.below(60)), 1, 10).col(0));
    CHECK(std::abs(s.sum() - 1) <= 1e-6);
    CHECK(s.minCoeff() > 0);
  }
}

TEST_CASE("fusion commutes with candidate permutations") {
  Rng rng(5);
  const int n = 5;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const Vec sv = rng.normal_matrix(n, 1, 1).col(0), st = rng.normal_matrix(n, 1, 1).col(0);
    FusionHead h{rng.normal_matrix(n, 2 * n, 1), rng.normal_matrix(n, 1, 1).col(0)};
    Vec psv(n), pst(n);
    FusionHead ph{Mat(n, 2 * n), Vec(n)};
    for (int i = 0; i < n; ++i) {
      psv[i] = sv[perm[i]];
      pst[i] = st[perm[i]];
      ph.b[i] = h.b[perm[i]];
      for (int j = 0; j < n; ++j) {
        ph.W(i, j) = h.W(perm[i], perm[j]);
        ph.W(i, n + j) = h.W(perm[i], n + perm[j]);
      }
    }
    const Vec s = fuse(sv, st, h), ps = fuse(psv, pst, ph);
    for (int i = 0; i < n; ++i) CHECK(std::abs(ps[i] - s[perm[i]]) < 1e-14);
  }
}

TEST_CASE("loss") {
  CHECK(loss((Vec(3) << 0, 1, 0).finished(), 1) == 0.0);
  CHECK(std::abs(loss(Vec::Constant(4, 0.25), 2) - std::log(4.0)) < 1e-15);
  CHECK(std::abs(loss((Vec(2) << 0.25, 0.75).finished(), 0) - 1.3862943611198906) < 1e-12);
  bool clamped = false;
  CHECK(std::abs(loss((Vec(2) << 0, 1).finished(), 0, &clamped) - (-std::log(kProbabilityFloor))) < 1e-12);
  CHECK(clamped);
  loss((Vec(2) << 0.5, 0.5).finished(), 0, &clamped);
  CHECK(!clamped);
  CHECK_THROWS_AS(loss(Vec::Constant(2, 0.5), 2), ContractViolation);
}

TEST_CASE("prediction") {
  CHECK(predict((Vec(4) << 0, 0, 1, 0).finished()) == 2);
  CHECK(predict(Vec::Constant(5, 0.2)) == 0);
  CHECK(predict((Vec(3) << 0.2, 0.4, 0.4).finished()) == 1);
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec s = softmax(rng.normal_matrix(7, 1, 2).col(0));
    std::size_t best = 0;
    for (std::size_t i = 1; i < 7; ++i)
      if (s[static_cast<Eigen::Index>(i)] > s[static_cast<Eigen::Index>(best)]) best = i;
    CHECK(predict(s) == best);
    CHECK(predict(s.array().log().matrix()) == best);
    CHECK(predict((3.0 * s.array() + 1.0).matrix()) == best);
    CHECK(predict(s.array().cube().matrix()) == best);
  }
}

TEST_CASE("forward pipeline pieces agree") {
  for (bool textual : {true, false})
    for (bool vrk : {true, false}) {
      ModelOptions opts;
      opts.use_textual = textual;
      opts.use_vrk = vrk;
      const auto m = test::small_model(opts, 11);
      Rng rng(12);
      const auto s = test::random_object(0, 3, rng), o = test::random_object(1, 3, rng);
      const auto rec = forward(m, s, o);
      CHECK(rec.v == encode_pair(s, o, m.pair));
      CHECK(rec.scores.s_t.size() == 4);
      CHECK(rec.scores.s_v.size() == 4);
      CHECK(std::abs(rec.scores.s.sum() - 1) < 1e-12);
      if (!vrk) CHECK(rec.scores.s_v == Vec::Zero(4));
      else CHECK(rec.scores.s_v == m.vrk->prior_scores("dog", "apple", m.candidates.names()));
      for (const auto& c : rec.candidates) CHECK(c.rep.projected.size() == m.hidden_dim());
      const auto traces = predicate_traces(m, 0, 1);
      const auto reps = projected_reps(traces);
      const auto sv = score_from_parts(m, rec.v, reps, prior_vector(m, 0, 1));
      CHECK(sv.s == rec.scores.s);
      CHECK(score_pair(m, s, o).s == rec.scores.s);
      CHECK((rec.scores.s - fuse(rec.scores.s_v, rec.scores.s_t, m.head)).norm() == 0.0);
      if (textual) CHECK((predicate_traces(m, 2, 3)[0].rep.projected - reps[0]).norm() > 1e-9);
      else CHECK(predicate_traces(m, 2, 3)[0].rep.projected == reps[0]);
    }
}

TEST_CASE("vanishing gradient at the optimum") {
  auto m = test::small_model({}, 13);
  m.head.W.setZero();
  m.head.b = Vec::Zero(4);
  m.head.b[1] = 60;
  Rng rng(14);
  const auto rec = forward(m, test::random_object(0, 3, rng), test::random_object(1, 3, rng));
  auto g = ModelGrad::zeros(m);
  CHECK(backward(m, rec, 1, g) < 1e-20);
  CHECK(g.b_f.norm() < 1e-20);
  CHECK(g.W_v.norm() < 1e-20);
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(15);
  std::size_t checked = 0;
  for (int inst = 0; inst < 24; ++inst) {
    ModelOptions opts;
    opts.use_textual = inst % 4 != 3;
    opts.use_vrk = inst % 3 != 2;
    opts.polarity = inst % 2 ? MetricPolarity::Distance : MetricPolarity::Similarity;
    opts.template_kind = static_cast<TemplateKind>(inst % 3);
    auto m = test::small_model(opts, 100 + inst);
    test::perturb_head(m, rng);
    const auto s = test::random_object(static_cast<int>(rng.below(4)), 3, rng);
    const auto o = test::random_object(static_cast<int>(rng.below(4)), 3, rng);
    const std::size_t gold = rng.below(4);
    auto g = ModelGrad::zeros(m);
    auto lossf = [&] { return loss(forward(m, s, o).scores.s, gold); };
    auto refresh = [&] {
      g.set_zero();
      backward(m, forward(m, s, o), gold, g);
    };
    const auto rep = test::check_gradients(test::model_probes(m, g), lossf, refresh, rng, 12);
    CHECK_MESSAGE(rep.max_rel_error <= 1e-4, "instance " << inst << ": " << rep.worst);
    checked += rep.checked;
  }
  CHECK(checked >= 24 * 9 * 4);
}

TEST_CASE("batched backward equals per-instance backward") {
  auto m = test::small_model({}, 20);
  Rng rng(21);
  test::perturb_head(m, rng);
  const auto traces = predicate_traces(m, 0, 1);
  const auto reps = projected_reps(traces);
  const Vec prior = prior_vector(m, 0, 1);
  auto batched = ModelGrad::zeros(m), single = ModelGrad::zeros(m);
  std::vector<Vec> d_reps;
  for (int i = 0; i < 3; ++i) {
    const auto s = test::random_object(0, 3, rng), o = test::random_object(1, 3, rng);
    const auto pf = forward_pair(m, s, o, reps, prior);
    backward_pair(m, pf, reps, i, batched, d_reps);
    backward(m, forward(m, s, o), i, single);
  }
  backward_predicates(m, traces, d_reps, batched);
  CHECK((batched.W_p - single.W_p).norm() < 1e-12);
  CHECK((batched.context.U - single.context.U).norm() < 1e-12);
  CHECK((batched.W_v - single.W_v).norm() < 1e-12);
}

TEST_CASE("golden gradient") {
  auto m = test::small_model({}, 30);
  Rng rng(31);
  test::perturb_head(m, rng);
  const auto rec = forward(m, test::random_object(2, 3, rng), test::random_object(3, 3, rng));
  auto g = ModelGrad::zeros(m);
  backward(m, rec, 2, g);
  std::vector<double> all;
  for (const auto& p : test::model_probes(m, g)) all.insert(all.end(), p.grad, p.grad + p.size);
  test::check_golden("fusion_gradient", all, 1e-10);
}

TEST_CASE("model checkpoint") {
  for (bool vrk : {true, false}) {
    ModelOptions opts;
    opts.use_vrk = vrk;
    opts.template_kind = TemplateKind::Cloze;
    const auto m = test::small_model(opts, 40);
    const std::string bytes = m.serialize();
    CHECK(bytes.rfind("KFVFUS1", 0) == 0);
    const auto back = KfvModel::deserialize(bytes);
    CHECK(back.same_as(m));
    CHECK(back.serialize() == bytes);
    CHECK_THROWS_AS(KfvModel::deserialize(bytes.substr(0, bytes.size() / 2)), ParseError);
    CHECK_THROWS_AS(KfvModel::deserialize(bytes + std::string(1, '\0')), ParseError);
  }
  auto a = test::small_model({}, 41), b = test::small_model({}, 41);
  CHECK(a.same_as(b));
  b.head.b[0] += 1e-9;
  CHECK(!a.same_as(b));
}

TEST_CASE("model construction errors") {
  ModelOptions opts;
  CHECK_THROWS_AS(KfvModel::create(CandidateSet::from_relations({"on"}), {"dog"},
                                   test::random_table({"dog"}, 3, 1), nullptr, opts, 3, 4, 1),
                  ConfigError);
  opts.use_vrk = false;
  const auto m = KfvModel::create(CandidateSet::from_relations({"on"}), {"dog"},
                                  test::random_table({"dog"}, 3, 1), nullptr, opts, 3, 4, 1);
  CHECK(m.feature_dim() == 3);
  CHECK(m.hidden_dim() == 4);
  CHECK_THROWS_AS(m.class_name(1), ContractViolation);
}

}
