#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cosetconv/config.hpp"
#include "cosetconv/data.hpp"
#include "cosetconv/nn.hpp"

namespace cosetconv {

struct ClassifierConfig {
  std::vector<BlockConfig> blocks;
  int num_classes = 4;
  int input_channels = 1;  // features start as ones
  int coset_k = 16;        // neighborhood size when normals must be derived
  bool use_true_normals = true;
  std::uint64_t init_seed = 1;

  static ClassifierConfig from_run_config(const RunConfig& rc);
};

/// Point-cloud classifier: a stack of convolution blocks, global mean
/// pooling over the final centroids, and a linear head.
struct Classifier {
  ClassifierConfig cfg;
  std::vector<BlockParams> blocks;
  Tensor head_w, head_b;

  static Classifier init(const ClassifierConfig& cfg);

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  /// Parameters plus batch-norm running statistics; the checkpoint payload.
  std::vector<std::pair<std::string, Tensor*>> named_state();
  void load_state(const std::map<std::string, Tensor>& state);
};

struct BoundClassifier {
  std::vector<BoundBlock> blocks;
  int head_w = -1, head_b = -1;
};
BoundClassifier bind_classifier(Tape& t, ParamBinding& binding, Classifier& model);

/// Forward over a batch of clouds; returns one [1, num_classes] logits var
/// per cloud. Normals are taken from the cloud when present and configured,
/// otherwise derived by coset augmentation.
std::vector<int> classifier_forward(Tape& t, Classifier& model, const BoundClassifier& bound,
                                    const std::vector<const PointCloud*>& clouds, bool training);

struct TrainOptions {
  int epochs = 40;
  int batch_size = 8;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  double label_smoothing = 0.2;
  double adam_beta1 = 0.9;
  bool scale_augment = false;
  double scale_lo = 2.0 / 3.0;
  double scale_hi = 1.5;
  std::uint64_t shuffle_seed = 1;
  std::function<void(int epoch, double loss)> on_epoch;  // optional progress hook
};

struct TrainStats {
  std::vector<double> epoch_loss;
};

TrainStats train_classifier(Classifier& model, const LabeledBatch& train,
                            const TrainOptions& opts);

double evaluate_accuracy(Classifier& model, const LabeledBatch& batch);

/// Argmax class per cloud, eval mode.
std::vector<int> predict(Classifier& model, const std::vector<const PointCloud*>& clouds);

}  // namespace cosetconv
