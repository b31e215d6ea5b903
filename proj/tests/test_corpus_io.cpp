#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kfv/corpus_io.hpp"
#include "kfv/eval_metrics.hpp"
#include "kfv/fewshot_trainer.hpp"
#include "test_util.hpp"

using namespace kfv;

namespace {

FeatureStore fixture_features() {
  FeatureStore fs;
  for (int i = 1; i <= 9; ++i) fs.add("f" + std::to_string(i), Vec::Constant(4, 0.5 * i));
  return fs;
}

std::size_t error_line(const std::string& jsonl, const FeatureStore& fs, std::string* msg = nullptr) {
  try {
    parse_dataset(jsonl, fs);
  } catch (const ParseError& e) {
    if (msg) *msg = e.what();
    return e.line();
  }
  return 0;
}

const char* kGood = R"({"image_id": "ok", "objects": [{"box": [0,0,1,1], "class": "dog", "feature": "f1"}, {"box": [0,0,1,1], "class": "cat", "feature": "f2"}]})";

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("kfv_corpus_" + name);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_SUITE("corpus_io") {

TEST_CASE("empty file gives an empty dataset") {
  CHECK(parse_dataset("", FeatureStore{}).empty());
  CHECK(parse_dataset("\n  \n", FeatureStore{}).empty());
}

TEST_CASE("fixture dataset") {
  const auto fs = fixture_features();
  const auto recs = parse_dataset(test::read_fixture("dataset_small.jsonl"), fs);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].image_id == "img_a");
  CHECK(recs[0].objects.size() == 3);
  CHECK(recs[0].relations.size() == 2);
  CHECK(recs[1].objects.size() == 2);
  CHECK(recs[1].relations.size() == 1);
  CHECK(recs[2].objects.size() == 4);
  CHECK(recs[2].relations.empty());
  CHECK(recs[0].objects[1].feature == Vec::Constant(4, 1.0));
  CHECK(recs[0].objects[0].box == Box{0.1, 0.1, 0.5, 0.6});
  CHECK(recs[0].relations[1].predicate == "eating");
  CHECK(collect_classes(recs) == std::vector<std::string>{"apple", "cat", "dog", "man", "sofa"});
  auto bound = recs;
  bind_classes(bound, collect_classes(recs));
  CHECK(bound[0].objects[0].class_tag == 2);
  CHECK(bound[0].descriptor(1).class_tag == 4);
  CHECK_THROWS_AS(bind_classes(bound, {"dog"}), ConfigError);
  CHECK(parse_dataset(dataset_to_jsonl(recs), fs).size() == 3);
  CHECK(dataset_to_jsonl(parse_dataset(dataset_to_jsonl(recs), fs)) == dataset_to_jsonl(recs));
}

TEST_CASE("schema errors name the line and image") {
  const auto fs = fixture_features();
  std::string msg;
  const std::string good = std::string(kGood) + "\n";
  CHECK(error_line(good + "{not json\n", fs) == 2);
  CHECK(error_line(good + R"({"image_id": "x", "objects": [{"box": [0,0,1,1], "class": "dog", "feature": "f1"}], "relations": [{"subject": 0, "predicate": "on", "object": 3}]})" + "\n",
                   fs, &msg) == 2);
  CHECK(msg.find("x") != std::string::npos);
  CHECK(msg.find("out of range") != std::string::npos);
  CHECK(error_line(R"({"image_id": "m", "objects": [{"box": [0,0,1,1], "class": "dog", "feature": "nope"}]})", fs, &msg) == 1);
  CHECK(msg.find("nope") != std::string::npos);
  CHECK(error_line(R"({"image_id": "b", "objects": [{"box": [0.5,0,0.2,1], "class": "dog", "feature": "f1"}]})", fs) == 1);
  CHECK(error_line(R"({"image_id": "s", "objects": [{"box": [0,0,1,1], "class": "dog", "feature": "f1"}], "relations": [{"subject": 0, "predicate": "on", "object": 0}]})", fs) == 1);
  CHECK(error_line(good + good, fs, &msg) == 2);
  CHECK(msg.find("duplicate") != std::string::npos);
  auto mixed = fixture_features();
  mixed.add("short", Vec::Zero(2));
  CHECK(error_line(R"({"image_id": "d", "objects": [{"box": [0,0,1,1], "class": "dog", "feature": "f1"}, {"box": [0,0,1,1], "class": "dog", "feature": "short"}]})", mixed, &msg) == 1);
  CHECK(msg.find("dimension") != std::string::npos);
}

TEST_CASE("feature store round trip") {
  const auto dir = temp_dir("store");
  FeatureStore fs;
  Rng rng(1);
  fs.add("a", rng.normal_matrix(3, 1, 1).col(0));
  fs.add("b", rng.normal_matrix(5, 1, 1).col(0));
  fs.save(dir + "/f.bin", dir + "/f.idx");
  const auto back = FeatureStore::load(dir + "/f.bin", dir + "/f.idx");
  CHECK(back.size() == 2);
  CHECK(back.get("a") == fs.get("a"));
  CHECK(back.get("b") == fs.get("b"));
  CHECK(std::filesystem::file_size(dir + "/f.bin") == 8 * 8);
  CHECK_THROWS_AS(fs.add("a", Vec::Zero(3)), ContractViolation);
  std::ofstream(dir + "/bad.idx") << "a\t0\t100\n";
  CHECK_THROWS_AS(FeatureStore::load(dir + "/f.bin", dir + "/bad.idx"), ParseError);
}

TEST_CASE("benchmark relation lists") {
  CHECK(benchmark_relations("50way").size() == 50);
  CHECK_THROWS_AS(benchmark_relations("25way"), ConfigError);
  CHECK_THROWS_AS(benchmark_relations("13way"), ConfigError);
  const auto dir = temp_dir("bench");
  std::ofstream(dir + "/r.txt") << "on\n# comment\nnear\n\n";
  CHECK(benchmark_relations("custom:" + dir + "/r.txt") == std::vector<std::string>{"on", "near"});
  std::ofstream(dir + "/dup.txt") << "on\non\n";
  CHECK_THROWS_AS(benchmark_relations("custom:" + dir + "/dup.txt"), ConfigError);
  std::ofstream(dir + "/empty.txt") << "";
  CHECK_THROWS_AS(benchmark_relations("custom:" + dir + "/empty.txt"), ConfigError);
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec spec;
  spec.train_images = 20;
  spec.test_images = 10;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(dataset_to_jsonl(a.train) == dataset_to_jsonl(b.train));
  CHECK(dataset_to_jsonl(a.test) == dataset_to_jsonl(b.test));
  CHECK(captions_to_jsonl(a.captions) == captions_to_jsonl(b.captions));
  CHECK(a.embeddings == b.embeddings);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    for (std::size_t j = 0; j < a.train[i].objects.size(); ++j)
      CHECK(a.train[i].objects[j].feature == b.train[i].objects[j].feature);
  spec.seed = 8;
  CHECK(dataset_to_jsonl(generate_synthetic(spec).train) != dataset_to_jsonl(a.train));
}

TEST_CASE("zero noise gives one feature per class") {
  SyntheticSpec spec;
  spec.sigma = 0;
  spec.train_images = 30;
  spec.test_images = 10;
  const auto ds = generate_synthetic(spec);
  std::map<std::string, Vec> first;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& r : *split)
      for (const auto& o : r.objects) {
        auto [it, inserted] = first.emplace(o.class_name, o.feature);
        if (!inserted) CHECK(it->second == o.feature);
      }
  CHECK(first.size() == 12);
}

TEST_CASE("labels follow the rule table") {
  SyntheticSpec spec;
  spec.train_images = 30;
  spec.test_images = 30;
  const auto ds = generate_synthetic(spec);
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& r : *split) {
      std::set<std::pair<std::size_t, std::size_t>> labeled;
      for (const auto& rel : r.relations) {
        const int a = r.objects[rel.subject].class_tag, b = r.objects[rel.object].class_tag;
        const int want = ds.rules.at({a % spec.groups, b % spec.groups});
        REQUIRE(want >= 0);
        CHECK(rel.predicate == ds.relations[static_cast<std::size_t>(want)]);
        labeled.emplace(rel.subject, rel.object);
      }
      for (const auto& [i, j] : ordered_pairs(r.objects.size()))
        if (!labeled.count({i, j}))
          CHECK(ds.rules.at({r.objects[i].class_tag % spec.groups, r.objects[j].class_tag % spec.groups}) == -1);
    }
}

TEST_CASE("holdout partition matches an independent enumeration") {
  SyntheticSpec spec;  // 12 classes, 10 relations, holdout 0.3, seed 7
  const auto ds = generate_synthetic(spec);
  std::map<int, std::size_t> per_relation;
  for (int a = 0; a < spec.num_classes; ++a)
    for (int b = 0; b < spec.num_classes; ++b)
      if (a != b) {
        const int r = ds.rules.at({a % spec.groups, b % spec.groups});
        if (r >= 0) ++per_relation[r];
      }
  std::size_t total = 0, unseen = 0;
  for (const auto& [r, n] : per_relation) {
    total += n;
    unseen += static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(n)));
  }
  CHECK(per_relation.size() == 10);
  CHECK(ds.unseen_pairs.size() == unseen);
  CHECK(ds.seen_pairs.size() == total - unseen);
  for (const auto& p : ds.unseen_pairs) CHECK(ds.seen_pairs.count(p) == 0);

  // Training images never contain a held-out pair; every seen pair keeps a relation.
  for (const auto& r : ds.train)
    for (const auto& rel : r.relations)
      CHECK(ds.unseen_pairs.count({r.objects[rel.subject].class_tag, r.objects[rel.object].class_tag}) == 0);

  // Support sets sampled downstream see only generator-seen pairs.
  auto records = ds.train;
  bind_classes(records, ds.classes);
  const auto support = sample_support(records, CandidateSet::from_relations(ds.relations), EpisodeConfig{});
  for (const auto& p : seen_sets(support).pairs) {
    CHECK(ds.seen_pairs.count(p) == 1);
    CHECK(ds.unseen_pairs.count(p) == 0);
  }
}

TEST_CASE("zero holdout leaves every test pair seen") {
  SyntheticSpec spec;
  spec.holdout = 0;
  spec.train_images = 20;
  spec.test_images = 20;
  const auto ds = generate_synthetic(spec);
  CHECK(ds.unseen_pairs.empty());
  for (const auto& r : ds.test)
    for (const auto& rel : r.relations)
      CHECK(ds.seen_pairs.count({r.objects[rel.subject].class_tag, r.objects[rel.object].class_tag}) == 1);
}

TEST_CASE("incomplete rule table is rejected") {
  SyntheticSpec spec;
  spec.groups = 2;
  spec.rules = {{{0, 0}, 1}, {{0, 1}, -1}, {{1, 0}, 2}};
  try {
    generate_synthetic(spec);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("(1, 1)") != std::string::npos);
  }
  spec.rules[{1, 1}] = 0;
  CHECK_NOTHROW(generate_synthetic(spec));
  spec.rules[{1, 1}] = 10;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  SyntheticSpec bad;
  bad.holdout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.holdout = 0.3;
  bad.sigma = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synthetic captions feed the parser") {
  SyntheticSpec spec;
  spec.kg_noise = 0;
  spec.train_images = 5;
  spec.test_images = 5;
  const auto ds = generate_synthetic(spec);
  const auto lex = Lexicon::parse(ds.lexicon_tsv);
  const auto triplets = parse_corpus(ds.captions, lex);
  CHECK(triplets.size() == ds.captions.size());
  std::map<std::string, int> class_index;
  for (std::size_t c = 0; c < ds.classes.size(); ++c) class_index[ds.classes[c]] = static_cast<int>(c);
  for (const auto& t : triplets) {
    const int a = class_index.at(t.subject), b = class_index.at(t.object);
    CHECK(t.predicate == ds.relations[static_cast<std::size_t>(ds.rules.at({a % spec.groups, b % spec.groups}))]);
  }
  CHECK(read_captions_jsonl(captions_to_jsonl(ds.captions)).size() == ds.captions.size());
}

}
