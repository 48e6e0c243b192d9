#include "cosetconv/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cosetconv/mathutil.hpp"

namespace cosetconv {

ClassifierConfig ClassifierConfig::from_run_config(const RunConfig& rc) {
  const auto m = rc.get_int_list("model.m");
  const auto k = rc.get_int_list("model.k");
  const auto radius = rc.get_double_list("model.radius");
  const auto channels = rc.get_int_list("model.channels");
  if (m.empty() || m.size() != k.size() || m.size() != radius.size() ||
      m.size() != channels.size())
    throw std::runtime_error("config: model.m/k/radius/channels must be equal-length lists");

  ClassifierConfig cfg;
  cfg.num_classes = rc.get_int("data.classes");
  cfg.input_channels = rc.get_int("model.input_channels");
  cfg.coset_k = rc.get_int("model.coset_k");
  cfg.use_true_normals = rc.get_bool("model.use_true_normals");
  cfg.init_seed = static_cast<std::uint64_t>(rc.get_int("seed"));

  int c_in = cfg.input_channels;
  for (std::size_t i = 0; i < m.size(); ++i) {
    BlockConfig b;
    b.m = m[i];
    b.conv.max_neighbors = k[i];
    b.conv.radius = radius[i];
    b.conv.c_in = c_in;
    b.conv.c_out = channels[i];
    b.conv.anchors = rc.get_int("model.anchors");
    b.conv.embed_d = rc.get_int("model.embed_d");
    b.conv.embed_sigma = rc.get_double("model.embed_sigma");
    b.conv.normalize_by_count = rc.get_bool("model.normalize_by_count");
    b.residual = rc.get_bool("model.residual");
    b.raw_offset_embedding = rc.get_bool("model.ablation_raw_offsets");
    b.coeff_hidden = rc.get_int_list("model.coeff_hidden");
    cfg.blocks.push_back(b);
    c_in = channels[i];
  }
  return cfg;
}

Classifier Classifier::init(const ClassifierConfig& cfg) {
  if (cfg.blocks.empty()) throw std::invalid_argument("Classifier: need at least one block");
  Classifier model;
  model.cfg = cfg;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i)
    model.blocks.push_back(BlockParams::init(cfg.blocks[i], cfg.init_seed + 101 * (i + 1)));

  const int c_last = cfg.blocks.back().conv.c_out;
  std::mt19937_64 rng(cfg.init_seed + 9001);
  model.head_w = Tensor({static_cast<std::size_t>(cfg.num_classes),
                         static_cast<std::size_t>(c_last)});
  model.head_b = Tensor({static_cast<std::size_t>(cfg.num_classes)});
  init_fan_in_uniform(model.head_w, c_last, rng);
  init_fan_in_uniform(model.head_b, c_last, rng);
  return model;
}

std::vector<std::pair<std::string, Tensor*>> Classifier::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    BlockParams& p = blocks[b];
    for (std::size_t l = 0; l < p.coeff.weights.size(); ++l) {
      out.push_back({prefix + "coeff.w" + std::to_string(l), &p.coeff.weights[l]});
      out.push_back({prefix + "coeff.b" + std::to_string(l), &p.coeff.biases[l]});
    }
    out.push_back({prefix + "bases", &p.bases});
    out.push_back({prefix + "bn.gamma", &p.bn.gamma});
    out.push_back({prefix + "bn.beta", &p.bn.beta});
    if (cfg.blocks[b].residual) {
      out.push_back({prefix + "res.w", &p.res_w});
      out.push_back({prefix + "res.b", &p.res_b});
    }
  }
  out.push_back({"head.w", &head_w});
  out.push_back({"head.b", &head_b});
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Classifier::named_state() {
  auto out = named_parameters();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    BlockParams& p = blocks[b];
    if (p.bn.running.initialized) {
      out.push_back({prefix + "bn.run_mean", &p.bn.running.mean});
      out.push_back({prefix + "bn.run_var", &p.bn.running.var});
    }
  }
  return out;
}

void Classifier::load_state(const std::map<std::string, Tensor>& state) {
  for (auto& [name, tensor] : named_parameters()) {
    const auto it = state.find(name);
    if (it == state.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != tensor->shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    *tensor = it->second;
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    const auto mi = state.find(prefix + "bn.run_mean");
    const auto vi = state.find(prefix + "bn.run_var");
    if (mi != state.end() && vi != state.end()) {
      blocks[b].bn.running.mean = mi->second;
      blocks[b].bn.running.var = vi->second;
      blocks[b].bn.running.initialized = true;
    }
  }
}

BoundClassifier bind_classifier(Tape& t, ParamBinding& binding, Classifier& model) {
  BoundClassifier bound;
  for (std::size_t b = 0; b < model.blocks.size(); ++b)
    bound.blocks.push_back(
        bind_block(t, binding, model.blocks[b], model.cfg.blocks[b].residual));
  bound.head_w = binding.bind(t, model.head_w);
  bound.head_b = binding.bind(t, model.head_b);
  return bound;
}

std::vector<int> classifier_forward(Tape& t, Classifier& model, const BoundClassifier& bound,
                                    const std::vector<const PointCloud*>& clouds, bool training) {
  if (clouds.empty()) throw std::invalid_argument("classifier_forward: no clouds");

  // Geometry and first features per cloud.
  std::vector<PointCloud> geom(clouds.size());
  std::vector<BlockInput> stage(clouds.size());
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    geom[b].coords = clouds[b]->coords;
    if (model.cfg.use_true_normals && clouds[b]->has_normals())
      geom[b].normals = clouds[b]->normals;
    else
      geom[b].normals = augment_cosets(geom[b].coords,
                                       std::min<int>(model.cfg.coset_k, geom[b].coords.size()));
    Tensor ones = Tensor::full({geom[b].coords.size(),
                                static_cast<std::size_t>(model.cfg.input_channels)},
                               1.0);
    stage[b].geom = &geom[b];
    stage[b].feats = ops::constant(t, std::move(ones));
  }

  for (std::size_t layer = 0; layer < model.cfg.blocks.size(); ++layer) {
    auto outs = conv_block_batch(t, stage, model.cfg.blocks[layer], bound.blocks[layer],
                                 model.blocks[layer], training);
    for (std::size_t b = 0; b < clouds.size(); ++b) {
      geom[b] = std::move(outs[b].geom);
      stage[b].geom = &geom[b];
      stage[b].feats = outs[b].feats;
    }
  }

  std::vector<int> logits(clouds.size());
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    const int pooled = ops::mean_rows(t, stage[b].feats);
    logits[b] = ops::linear(t, pooled, bound.head_w, bound.head_b);
  }
  return logits;
}

TrainStats train_classifier(Classifier& model, const LabeledBatch& train,
                            const TrainOptions& opts) {
  if (train.size() == 0) throw std::invalid_argument("train_classifier: empty training set");
  if (opts.batch_size < 1) throw std::invalid_argument("train_classifier: batch_size must be >= 1");

  AdamState adam;
  adam.beta1 = opts.adam_beta1;
  std::mt19937_64 shuffle_rng(opts.shuffle_seed);
  std::mt19937_64 augment_rng(opts.shuffle_seed ^ 0xabcdef1234567ull);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainStats stats;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = cosine_lr(epoch, opts.epochs, opts.lr_max, opts.lr_min);
    double epoch_loss = 0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      std::vector<PointCloud> augmented;
      std::vector<const PointCloud*> clouds;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const PointCloud& src = train.clouds[order[i]];
        if (opts.scale_augment) {
          augmented.push_back(
              scale_augment(src, augment_rng, opts.scale_lo, opts.scale_hi, model.cfg.coset_k));
        }
        labels.push_back(train.labels[order[i]]);
      }
      if (opts.scale_augment)
        for (const auto& c : augmented) clouds.push_back(&c);
      else
        for (std::size_t i = start; i < end; ++i) clouds.push_back(&train.clouds[order[i]]);

      Tape tape;
      ParamBinding binding;
      BoundClassifier bound = bind_classifier(tape, binding, model);
      const std::vector<int> logits = classifier_forward(tape, model, bound, clouds, true);
      std::vector<int> losses;
      for (std::size_t b = 0; b < clouds.size(); ++b)
        losses.push_back(
            ops::smoothed_cross_entropy(tape, logits[b], labels[b], opts.label_smoothing));
      const int loss = ops::mean_scalars(tape, losses);
      tape.backward(loss);

      std::vector<Tensor> grads;
      binding.harvest(tape, grads);
      std::vector<Tensor*> params;
      params.reserve(binding.entries.size());
      for (auto& [p, id] : binding.entries) params.push_back(p);
      adam_step(adam, params, grads, lr);

      epoch_loss += tape.val(loss).v[0];
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    stats.epoch_loss.push_back(epoch_loss);
    if (opts.on_epoch) opts.on_epoch(epoch, epoch_loss);
  }
  return stats;
}

std::vector<int> predict(Classifier& model, const std::vector<const PointCloud*>& clouds) {
  std::vector<int> out;
  out.reserve(clouds.size());
  // Eval one cloud at a time so batch composition cannot leak into results.
  for (const PointCloud* cloud : clouds) {
    Tape tape;
    ParamBinding binding;
    BoundClassifier bound = bind_classifier(tape, binding, model);
    const std::vector<int> logits = classifier_forward(tape, model, bound, {cloud}, false);
    const Tensor& l = tape.val(logits[0]);
    int best = 0;
    for (std::size_t c = 1; c < l.size(); ++c)
      if (l.v[c] > l.v[best]) best = static_cast<int>(c);
    out.push_back(best);
  }
  return out;
}

double evaluate_accuracy(Classifier& model, const LabeledBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty batch");
  std::vector<const PointCloud*> clouds;
  clouds.reserve(batch.size());
  for (const auto& c : batch.clouds) clouds.push_back(&c);
  const std::vector<int> pred = predict(model, clouds);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

}  // namespace cosetconv
