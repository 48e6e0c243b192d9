#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cosetconv/config.hpp"
#include "cosetconv/data.hpp"
#include "cosetconv/harness.hpp"
#include "cosetconv/model.hpp"

namespace cc = cosetconv;
using nlohmann::json;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_path;
  std::vector<std::string> sets;
  long long seed = -1;
};

cc::RunConfig build_config(const GlobalArgs& args) {
  cc::RunConfig rc;
  if (!args.config_path.empty()) rc.load_file(args.config_path);
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed >= 0) rc.set("seed", std::to_string(args.seed));
  rc.check_paths_exist();
  return rc;
}

void emit_report(const json& report, const std::string& out_path) {
  const std::string text = report.dump(2);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot open output path " + out_path);
    f << text << '\n';
  }
  std::cout << text << std::endl;
}

cc::Dataset dataset_from_config(const cc::RunConfig& rc) {
  return cc::make_dataset(rc.get_int("data.classes"), rc.get_int("data.train_per_class"),
                          rc.get_int("data.test_per_class"), rc.get_int("data.points"),
                          rc.get_double("data.noise_sigma"),
                          static_cast<std::uint64_t>(rc.get_int("seed")));
}

int cmd_gen(const cc::RunConfig& rc, const std::string& dir) {
  if (dir.empty()) throw std::runtime_error("gen: --out directory required");
  const cc::Dataset ds = dataset_from_config(rc);
  cc::write_dataset_dir(dir, ds);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size()
            << " test clouds to " << dir << std::endl;
  return 0;
}

int cmd_encode(const cc::RunConfig& rc, const std::string& cloud_path,
               const std::string& centroid_arg, const std::string& out_path) {
  cc::PointCloud cloud = cc::load_cloud_text(cloud_path);
  const double radius = rc.get_double("encode.radius");
  const int k = rc.get_int("encode.k");
  if (!cloud.has_normals())
    cloud.normals =
        cc::augment_cosets(cloud.coords, std::min<int>(rc.get_int("model.coset_k"),
                                                       static_cast<int>(cloud.size())));

  std::vector<int> centroids;
  if (centroid_arg == "all") {
    centroids.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) centroids[i] = static_cast<int>(i);
  } else {
    std::stringstream ss(centroid_arg);
    std::string item;
    while (std::getline(ss, item, ',')) centroids.push_back(std::stoi(item));
  }
  cc::PointCloud centroid_cloud;
  for (int ci : centroids) {
    if (ci < 0 || static_cast<std::size_t>(ci) >= cloud.size())
      throw std::runtime_error("encode: centroid index out of range");
    centroid_cloud.coords.push_back(cloud.coords[ci]);
    centroid_cloud.normals.push_back(cloud.normals[ci]);
  }
  const auto nbrs = cc::ball_query(centroid_cloud, cloud, radius, k);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("encode: cannot open " + out_path);
    out = &file;
  }
  out->precision(17);
  *out << "centroid,neighbor,beta,rbar,zbar\n";
  for (std::size_t m = 0; m < nbrs.size(); ++m) {
    const int ci = centroids[m];
    for (int ni : nbrs[m].neighbor_indices) {
      const cc::DoubleCosetParams p = cc::encode_double_coset(
          cloud.coords[ci], cloud.normals[ci], cloud.coords[ni], cloud.normals[ni], radius);
      *out << ci << ',' << ni << ',' << p.beta << ',' << p.rbar << ',' << p.zbar << '\n';
    }
  }
  return 0;
}

int cmd_check_equiv(const cc::RunConfig& rc, const std::string& out_path) {
  cc::EquivOptions opts;
  opts.pairs = rc.get_int("equiv.pairs");
  opts.transforms = rc.get_int("equiv.transforms");
  opts.points = rc.get_int("equiv.points");
  opts.translation_bound = rc.get_double("equiv.translation");
  opts.tol_coset = rc.get_double("tol.coset");
  opts.tol_layer = rc.get_double("tol.layer");
  opts.tol_network = rc.get_double("tol.network");
  opts.negative_control = rc.get_bool("equiv.negative_control");
  opts.seed = static_cast<std::uint64_t>(rc.get_int("seed"));
  opts.model = cc::ClassifierConfig::from_run_config(rc);
  // The invariance levels need clouds at least as large as the first m.
  if (!opts.model.blocks.empty() && opts.points < opts.model.blocks.front().m)
    throw std::runtime_error("check-equiv: equiv.points is smaller than model.m[0]");

  const cc::EquivReport rep = cc::run_equivariance_suite(opts);
  json report = {
      {"config_hash", rc.hash()},
      {"negative_control", rep.negative_control},
      {"levels",
       {{"coset", {{"max_deviation", rep.coset_max_dev}, {"tolerance", rep.tol_coset}}},
        {"layer", {{"max_deviation", rep.layer_max_dev}, {"tolerance", rep.tol_layer}}},
        {"network", {{"max_deviation", rep.network_max_dev}, {"tolerance", rep.tol_network}}}}},
      {"pass", rep.pass},
  };
  emit_report(report, out_path);
  return rep.pass ? 0 : 1;
}

int cmd_gradcheck(const cc::RunConfig& rc, const std::string& out_path) {
  cc::GradcheckOptions opts;
  opts.h = rc.get_double("gradcheck.h");
  opts.seeds = rc.get_int("gradcheck.seeds");
  opts.tol = rc.get_double("tol.gradcheck");
  opts.seed = static_cast<std::uint64_t>(rc.get_int("seed"));

  const cc::GradcheckReport rep = cc::run_gradcheck_suite(opts);
  json ops = json::object();
  for (const auto& [name, err] : rep.op_max_rel_err) ops[name] = err;
  json report = {
      {"config_hash", rc.hash()},
      {"h", opts.h},
      {"seeds", opts.seeds},
      {"tolerance", rep.tol},
      {"max_rel_err", ops},
      {"pass", rep.pass},
  };
  emit_report(report, out_path);
  return rep.pass ? 0 : 1;
}

int cmd_bench(const cc::RunConfig& rc, const std::string& sweep_arg,
              const std::string& ordering_arg, const std::string& out_path) {
  std::vector<int> as = rc.get_int_list("bench.A");
  std::vector<int> ks = rc.get_int_list("bench.K");
  std::vector<int> cins = rc.get_int_list("bench.cin");
  std::vector<int> couts = rc.get_int_list("bench.cout");
  if (!sweep_arg.empty()) {
    // --sweep A=...,K=...,cin=...,cout=... with comma lists inside each item
    std::stringstream ss(sweep_arg);
    std::string item;
    std::map<std::string, std::vector<int>> lists;
    std::string cur_key;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq != std::string::npos) {
        cur_key = item.substr(0, eq);
        item = item.substr(eq + 1);
      }
      if (cur_key.empty()) throw std::runtime_error("bench: bad --sweep syntax");
      lists[cur_key].push_back(std::stoi(item));
    }
    if (lists.count("A")) as = lists["A"];
    if (lists.count("K")) ks = lists["K"];
    if (lists.count("cin")) cins = lists["cin"];
    if (lists.count("cout")) couts = lists["cout"];
  }

  std::vector<cc::CostSweepPoint> sweep;
  for (int a : as)
    for (int k : ks)
      for (int ci : cins)
        for (int co : couts) sweep.push_back({a, k, ci, co});

  auto samples = cc::measure_costs(sweep, static_cast<std::uint64_t>(rc.get_int("seed")),
                                   rc.get_int("bench.repeats"));
  if (ordering_arg != "both") {
    const cc::KernelOrdering want = cc::ordering_from_name(ordering_arg);
    std::erase_if(samples, [&](const cc::CostSample& s) { return s.ordering != want; });
  }
  if (out_path.empty()) throw std::runtime_error("bench: --out CSV path required");
  cc::write_cost_csv(out_path, samples);
  std::cout << "wrote " << samples.size() << " rows to " << out_path << std::endl;
  return 0;
}

json eval_metrics(cc::Classifier& model, const cc::Dataset& ds) {
  const double acc_plain = cc::evaluate_accuracy(model, ds.test);
  const double acc_rotated = cc::evaluate_accuracy(model, ds.test_rotated);
  return {
      {"test_accuracy", acc_plain},
      {"test_accuracy_rotated", acc_rotated},
      {"gap_percent_points", 100.0 * std::abs(acc_plain - acc_rotated)},
  };
}

int cmd_train(const cc::RunConfig& rc, const std::string& out_path) {
  const cc::Dataset ds = dataset_from_config(rc);
  cc::Classifier model = cc::Classifier::init(cc::ClassifierConfig::from_run_config(rc));

  cc::TrainOptions opts;
  opts.epochs = rc.get_int("train.epochs");
  opts.batch_size = rc.get_int("train.batch");
  opts.lr_max = rc.get_double("train.lr_max");
  opts.lr_min = rc.get_double("train.lr_min");
  opts.label_smoothing = rc.get_double("train.label_smoothing");
  opts.adam_beta1 = rc.get_double("train.beta1");
  opts.scale_augment = rc.get_bool("train.scale_augment");
  opts.scale_lo = rc.get_double("train.scale_lo");
  opts.scale_hi = rc.get_double("train.scale_hi");
  opts.shuffle_seed = static_cast<std::uint64_t>(rc.get_int("seed")) + 0x5eed;
  opts.on_epoch = [](int epoch, double loss) {
    std::cerr << "epoch " << epoch << " loss " << loss << std::endl;
  };

  cc::train_classifier(model, ds.train, opts);

  std::size_t param_count = 0;
  for (auto& [name, t] : model.named_parameters()) param_count += t->size();
  json report = {{"config_hash", rc.hash()},
                 {"parameters", param_count},
                 {"metrics", eval_metrics(model, ds)}};
  if (!out_path.empty()) {
    std::vector<std::pair<std::string, const cc::Tensor*>> tensors;
    for (auto& [name, t] : model.named_state()) tensors.push_back({name, t});
    cc::save_checkpoint(out_path, tensors);
    report["checkpoint"] = out_path;
  }
  emit_report(report, out_path.empty() ? "" : out_path + ".metrics.json");
  return 0;
}

int cmd_eval(const cc::RunConfig& rc, const std::string& checkpoint_arg,
             const std::string& out_path) {
  std::string ckpt = checkpoint_arg.empty() ? rc.get_string("eval.checkpoint") : checkpoint_arg;
  if (ckpt.empty()) throw std::runtime_error("eval: checkpoint path required");
  const cc::Dataset ds = dataset_from_config(rc);
  cc::Classifier model = cc::Classifier::init(cc::ClassifierConfig::from_run_config(rc));
  model.load_state(cc::load_checkpoint(ckpt));

  json report = {{"config_hash", rc.hash()},
                 {"checkpoint", ckpt},
                 {"metrics", eval_metrics(model, ds)}};
  emit_report(report, out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SE(3)-invariant point-cloud convolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  GlobalArgs g;
  app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out_path, "output path (report, CSV, or checkpoint)");
  app.add_option("--set", g.sets, "override a config key, key=value (repeatable)");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
  auto* encode = app.add_subcommand("encode", "encode neighbor pairs to coset CSV");
  std::string cloud_path, centroid_arg = "all";
  encode->add_option("--cloud", cloud_path, "point-cloud text file")
      ->required()
      ->check(CLI::ExistingFile);
  encode->add_option("--centroids", centroid_arg, "comma list of indices, or 'all'");
  auto* check = app.add_subcommand("check-equiv", "run the transform-invariance suite");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of all layers");
  auto* bench = app.add_subcommand("bench", "cost counters and wall-clock for both orderings");
  std::string sweep_arg, ordering_arg = "both";
  bench->add_option("--sweep", sweep_arg, "A=..,..,K=..,cin=..,cout=.. lists");
  bench->add_option("--ordering", ordering_arg, "both|explicit|implicit");
  auto* train = app.add_subcommand("train", "train the toy classifier");
  auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  std::string checkpoint_arg;
  eval->add_option("--checkpoint", checkpoint_arg, "checkpoint file")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    const cc::RunConfig rc = build_config(g);
    if (gen->parsed()) return cmd_gen(rc, g.out_path);
    if (encode->parsed()) return cmd_encode(rc, cloud_path, centroid_arg, g.out_path);
    if (check->parsed()) return cmd_check_equiv(rc, g.out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(rc, g.out_path);
    if (bench->parsed()) return cmd_bench(rc, sweep_arg, ordering_arg, g.out_path);
    if (train->parsed()) return cmd_train(rc, g.out_path);
    if (eval->parsed()) return cmd_eval(rc, checkpoint_arg, g.out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
