#include "kfv/fewshot_trainer.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "kfv/binary_io.hpp"

namespace kfv {

void EpisodeConfig::validate() const {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (!(negative_ratio >= 0.0) || !std::isfinite(negative_ratio))
    throw ConfigError("negative_ratio must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
}

SupportSet sample_support(const std::vector<DatasetRecord>& pool, const CandidateSet& candidates,
                          const EpisodeConfig& config) {
  config.validate();
  struct Ref {
    std::size_t image, relation;
  };
  const std::size_t n_rel = candidates.size() - 1;
  std::vector<std::vector<Ref>> by_relation(n_rel);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& rec = pool[i];
    for (std::size_t r = 0; r < rec.relations.size(); ++r) {
      const auto& rel = rec.relations[r];
      if (rel.subject >= rec.objects.size() || rel.object >= rec.objects.size())
        throw ContractViolation("relation index out of range in image " + rec.image_id);
      auto p = candidates.index_of(rel.predicate);
      if (p && *p < n_rel) by_relation[*p].push_back({i, r});
    }
  }

  Rng rng(derive_seed(config.seed, 0x5355));
  SupportSet out;
  std::set<std::size_t> used_images;
  const auto shots = static_cast<std::size_t>(config.shots);
  for (std::size_t p = 0; p < n_rel; ++p) {
    auto refs = by_relation[p];
    if (refs.size() < shots) throw InsufficientInstances(candidates.name(p), refs.size(), config.shots);
    rng.shuffle(refs);
    for (std::size_t s = 0; s < shots; ++s) {
      const auto& rec = pool[refs[s].image];
      const auto& rel = rec.relations[refs[s].relation];
      out.instances.push_back({rec.image_id, rec.descriptor(rel.subject), rec.descriptor(rel.object), p});
      used_images.insert(refs[s].image);
    }
  }
  out.positives = out.instances.size();

  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> unlabeled;
  for (std::size_t img : used_images) {
    const auto& rec = pool[img];
    std::set<std::pair<std::size_t, std::size_t>> labeled;
    for (const auto& rel : rec.relations) labeled.emplace(rel.subject, rel.object);
    for (const auto& q : ordered_pairs(rec.objects.size()))
      if (!labeled.count(q)) unlabeled.push_back({img, q});
  }
  const auto wanted = static_cast<std::size_t>(
      std::ceil(config.negative_ratio * static_cast<double>(n_rel * shots) - 1e-9));
  rng.shuffle(unlabeled);
  const std::size_t take = std::min(wanted, unlabeled.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto& rec = pool[unlabeled[i].first];
    const auto [s, o] = unlabeled[i].second;
    out.instances.push_back(
        {rec.image_id, rec.descriptor(s), rec.descriptor(o), candidates.no_relation_index()});
  }
  return out;
}

SeenSets seen_sets(const SupportSet& support) {
  SeenSets seen;
  for (std::size_t i = 0; i < support.positives; ++i) {
    const auto& inst = support.instances[i];
    seen.add(inst.subject.class_tag, inst.predicate, inst.object.class_tag);
  }
  return seen;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  std::istringstream is(v);
  T x{};
  is >> x;
  if (is.fail() || !is.eof()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return x;
}

}  // namespace

void apply_config_text(std::string_view text, TrainConfig& train, EpisodeConfig& episode) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string val = trim(std::string_view(t).substr(eq + 1));
    if (key == "epochs") train.epochs = parse_number<int>(val, key);
    else if (key == "lr") train.learning_rate = parse_number<double>(val, key);
    else if (key == "optimizer") train.optimizer = parse_optimizer_kind(val);
    else if (key == "batch") train.batch_size = parse_number<int>(val, key);
    else if (key == "seed") train.seed = episode.seed = parse_number<std::uint64_t>(val, key);
    else if (key == "use_textual") train.use_textual = parse_bool(val, key);
    else if (key == "use_vrk") train.use_vrk = parse_bool(val, key);
    else if (key == "shots") episode.shots = parse_number<int>(val, key);
    else if (key == "negative_ratio") episode.negative_ratio = parse_number<double>(val, key);
    else throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno));
  }
}

double support_accuracy(const KfvModel& model, const SupportSet& support) {
  if (support.instances.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (const auto& inst : support.instances)
    if (predict(score_pair(model, inst.subject, inst.object).s) == inst.predicate) ++hit;
  return static_cast<double>(hit) / static_cast<double>(support.instances.size());
}

namespace {

std::string divergence_message(const KfvModel& model, const TrainConfig& config, long step) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (lr " << config.learning_rate << ", batch "
     << config.batch_size << "; parameter norms W_v " << model.pair.W.norm() << ", W_p "
     << model.projection.W.norm() << ", U " << model.context.U.norm() << ", V "
     << model.context.V.norm() << ", W_f " << model.head.W.norm() << ")";
  return os.str();
}

}  // namespace

TrainResult train(KfvModel& model, const SupportSet& support, const TrainConfig& config) {
  config.validate();
  if (support.instances.empty()) throw ConfigError("support set is empty");
  if (config.use_vrk && !model.vrk) throw ConfigError("use_vrk requires a knowledge encoder");
  model.options.use_textual = config.use_textual;
  model.options.use_vrk = config.use_vrk;
  for (const auto& inst : support.instances)
    if (inst.predicate >= model.candidates.size())
      throw ContractViolation("support predicate index out of range");

  ModelGrad grad = ModelGrad::zeros(model);
  const auto views = parameter_views(model, grad);
  Optimizer opt(config.optimizer, config.learning_rate);
  Rng rng(derive_seed(config.seed, 0x5452));

  std::vector<std::size_t> order(support.instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  struct Group {
    std::vector<CandidateTrace> traces;
    std::vector<Vec> reps;
    Vec prior;
    std::vector<Vec> d_reps;
  };

  TrainResult result;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      grad.set_zero();
      std::map<std::pair<int, int>, Group> groups;
      double total = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& inst = support.instances[order[b]];
        const auto key = std::make_pair(inst.subject.class_tag, inst.object.class_tag);
        auto it = groups.find(key);
        if (it == groups.end()) {
          Group g;
          g.traces = predicate_traces(model, key.first, key.second);
          g.reps = projected_reps(g.traces);
          g.prior = prior_vector(model, key.first, key.second);
          it = groups.emplace(key, std::move(g)).first;
        }
        Group& g = it->second;
        const PairForward rec = forward_pair(model, inst.subject, inst.object, g.reps, g.prior);
        total += backward_pair(model, rec, g.reps, inst.predicate, grad, g.d_reps);
      }
      for (auto& [key, g] : groups)
        if (!g.d_reps.empty()) backward_predicates(model, g.traces, g.d_reps, grad);
      const double n = static_cast<double>(end - start);
      const double mean = total / n;
      const long step = opt.steps();
      if (!std::isfinite(mean) || !std::isfinite(grad.squared_norm()))
        throw DivergenceError(divergence_message(model, config, step));
      grad.scale(1.0 / n);
      result.curve.push_back({step, mean});
      opt.step(views);
    }
  }
  result.train_accuracy = support_accuracy(model, support);
  return result;
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (const auto& p : curve) os << p.step << ',' << p.loss << '\n';
  return os.str();
}

void save_checkpoint(const KfvModel& model, const std::string& path) {
  bin::write_file(path, model.serialize());
}

KfvModel load_checkpoint(const std::string& path) {
  return KfvModel::deserialize(bin::read_file(path));
}

}  // namespace kfv
