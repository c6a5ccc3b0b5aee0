#include "relkit/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "relkit/errors.hpp"
#include "relkit/evalkit.hpp"
#include "relkit/explain.hpp"
#include "relkit/heatmaptools.hpp"
#include "relkit/io.hpp"
#include "relkit/prototype.hpp"
#include "relkit/rng.hpp"
#include "relkit/train.hpp"

namespace relkit {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("RK_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("RK_SEED must be an unsigned integer");
    }
  }
  return 1;
}

struct ExplainOptions {
  std::string model;
  std::string images;
  std::size_t index = 0;
  std::string method = "lrp";
  std::string rule = "deeptaylor";
  double epsilon = 0.01;
  std::optional<std::size_t> class_index;
  std::string filter;
  std::size_t translate = 0;
  std::size_t sliding_window = 0;
  std::string pattern;
  std::string render;
  std::string out;
};

struct TrainOptions {
  std::string images, labels, arch, out, bounds;
  std::size_t classes = 0;
  TrainConfig config;
};

struct PrototypeOptions {
  std::string model, images, labels, regularizer = "l2", expert, out, render;
  std::size_t class_index = 0;
  double lambda = 0.0, eta = 0.0, step_size = 0.1, tolerance = 1e-6, init_noise = 0.01;
  std::size_t iterations = 1000;
  std::optional<std::size_t> anchor_index;
};

struct EvaluateOptions {
  std::string model, images, out;
  std::size_t index = 0, count = 1;
  std::string method = "lrp", rule = "deeptaylor";
  double epsilon = 0.01;
  std::optional<std::size_t> class_index;
  bool pixel_flip = false, continuity = false;
  std::size_t patch = 4;
  double fill = 0.0, delta = 1e-3;
  std::size_t trials = 100;
};

struct RenderOptions {
  std::string heatmap, colormap = "diverging", out;
};

Tensor fit_input(const Tensor& image, const Shape& shape) {
  if (image.shape() == shape) return image;
  if (image.size() != element_count(shape)) {
    throw ShapeError("image " + shape_to_string(image.shape()) + " does not fit network input " +
                     shape_to_string(shape));
  }
  return image.reshaped(shape);
}

Tensor load_image(const std::string& path, std::size_t index) {
  const auto images = idx_images(load_idx(path));
  if (index >= images.size()) {
    throw std::out_of_range("image index " + std::to_string(index) + " beyond " + std::to_string(images.size()) +
                            " images");
  }
  return images[index];
}

RuleConfig make_rules(const std::string& rule, double epsilon, const ModelFile& model) {
  const Network& net = model.network;
  if (rule == "alpha1beta0") return RuleConfig::alpha_beta(net, 1.0, 0.0);
  if (rule == "alpha2beta1") return RuleConfig::alpha_beta(net, 2.0, 1.0);
  if (rule == "epsilon") return RuleConfig::epsilon(net, epsilon);
  if (rule == "deeptaylor") {
    if (model.input_bounds) {
      return RuleConfig::deep_taylor(net, InputDomain::Bounded, model.input_bounds->lower, model.input_bounds->upper);
    }
    return RuleConfig::deep_taylor(net, InputDomain::Real);
  }
  if (rule == "deeptaylor-nonnegative") return RuleConfig::deep_taylor(net, InputDomain::NonNegative);
  throw UsageError("unknown rule '" + rule + "'");
}

Explainer make_explainer(const std::string& method, const std::string& rule, double epsilon, const ModelFile& model,
                         std::optional<std::size_t> class_index) {
  auto pick = [class_index](const Network& n, const Tensor& x) {
    return class_index ? *class_index : predict(n, x);
  };
  if (method == "sensitivity") {
    return [pick](const Network& n, const Tensor& x) { return sensitivity(n, x, pick(n, x)); };
  }
  if (method == "taylor") {
    return [pick](const Network& n, const Tensor& x) { return simple_taylor(n, x, pick(n, x)); };
  }
  if (method == "lrp") {
    RuleConfig config = make_rules(rule, epsilon, model);
    return [pick, config](const Network& n, const Tensor& x) { return explain_lrp(n, x, pick(n, x), config); };
  }
  throw UsageError("unknown method '" + method + "'");
}

void print_summary(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& fields) {
  out << "{";
  for (std::size_t i = 0; i < fields.size(); ++i) {
    out << (i ? ", " : "") << '"' << fields[i].first << "\": " << fields[i].second;
  }
  out << "}\n";
}

std::string json_string(const std::string& s) { return '"' + s + '"'; }

Image grayscale(const Tensor& values) {
  Image img;
  const Shape& s = values.shape();
  img.height = s.size() >= 2 ? s[s.size() - 2] : 1;
  img.width = s.back();
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
    img.rgb.insert(img.rgb.end(), {g, g, g});
  }
  return img;
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
  const auto images = idx_images(load_idx(o.images));
  const auto labels = idx_labels(load_idx(o.labels));
  if (images.size() != labels.size()) throw std::runtime_error("image and label counts differ");
  Dataset data{images, labels};
  std::size_t classes = o.classes;
  if (classes == 0) classes = *std::max_element(labels.begin(), labels.end()) + 1;
  Network net = build_network(images.front().shape(), o.arch, classes, o.config.seed);
  net = train_sgd(net, data, o.config);
  ModelFile model{net, std::nullopt, std::nullopt};
  if (!o.bounds.empty()) {
    const auto colon = o.bounds.find(':');
    if (colon == std::string::npos) throw UsageError("--bounds expects lo:hi");
    const double lo = std::stod(o.bounds.substr(0, colon));
    const double hi = std::stod(o.bounds.substr(colon + 1));
    model.input_bounds = InputBounds{Tensor(net.input_shape(), lo), Tensor(net.input_shape(), hi)};
  }
  save_model_file(model, o.out);
  print_summary(out, {{"train_accuracy", format_double(accuracy(net, data))}, {"model", json_string(o.out)}});
  return 0;
}

int cmd_explain(const ExplainOptions& o, std::ostream& out) {
  const ModelFile model = load_model_file(o.model);
  const Network& net = model.network;
  const Tensor image = load_image(o.images, o.index);
  Heatmap heatmap;
  Tensor explained_image;

  if (o.sliding_window > 0) {
    if (o.method != "lrp") throw UsageError("--sliding-window requires --method lrp");
    const Shape& window = net.input_shape();
    const Tensor& big = image;
    if (big.rank() != window.size()) throw UsageError("--sliding-window needs an image with the network's layout");
    const std::size_t class_index = o.class_index.value_or(0);
    heatmap = sliding_window_explain(net, big, o.sliding_window, make_rules(o.rule, o.epsilon, model), class_index);
    explained_image = big;
  } else {
    const Tensor x = fit_input(image, net.input_shape());
    explained_image = x;
    const std::size_t class_index = o.class_index.value_or(predict(net, x));
    if (!o.filter.empty()) {
      if (o.method != "lrp") throw UsageError("--filter requires --method lrp");
      const auto colon = o.filter.find(':');
      if (colon == std::string::npos) throw UsageError("--filter expects layer:index");
      const std::size_t layer = std::stoul(o.filter.substr(0, colon));
      const std::size_t unit = std::stoul(o.filter.substr(colon + 1));
      if (layer > net.layer_count()) throw UsageError("--filter layer out of range");
      Tensor mask(net.shapes()[layer]);
      if (unit >= mask.size()) throw UsageError("--filter index out of range");
      mask[unit] = 1.0;
      heatmap = filter_relevance(net, forward(net, x), class_index, make_rules(o.rule, o.epsilon, model), layer, mask);
    } else {
      const Explainer explainer = make_explainer(o.method, o.rule, o.epsilon, model, class_index);
      if (o.translate > 0) {
        heatmap = translation_average(explainer, net, x, TranslationSet::within(o.translate));
      } else {
        heatmap = explainer(net, x);
      }
    }
  }

  if (!o.out.empty()) write_text(o.out, heatmap_to_csv(heatmap));
  if (!o.render.empty()) write_text(o.render, encode_ppm(render_heatmap(heatmap, Colormap::Diverging)));
  if (!o.pattern.empty()) {
    const Pattern p = pattern(explained_image, heatmap);
    if (p.degenerate) std::cerr << "warning: heatmap has no positive relevance; pattern is empty\n";
    write_text(o.pattern, encode_ppm(grayscale(p.values)));
  }
  print_summary(out, {{"method", json_string(heatmap.method)},
                      {"total", format_double(heatmap.total)},
                      {"explained_value", format_double(heatmap.explained_value)},
                      {"residual", format_double(heatmap.residual())},
                      {"absorbed", std::to_string(heatmap.absorbed)}});
  return 0;
}

int cmd_prototype(const PrototypeOptions& o, std::uint64_t seed, std::ostream& out) {
  const ModelFile model = load_model_file(o.model);
  const Network& net = model.network;
  AmObjective objective;
  objective.class_index = o.class_index;
  if (o.regularizer == "none") {
    objective.regularizer = NoRegularizer{};
  } else if (o.regularizer == "l2") {
    objective.regularizer = L2{o.lambda};
  } else if (o.regularizer == "l2mean") {
    if (o.images.empty() || o.labels.empty()) throw UsageError("l2mean needs --images and --labels for the class mean");
    const auto images = idx_images(load_idx(o.images));
    const auto labels = idx_labels(load_idx(o.labels));
    Tensor mean(net.input_shape());
    std::size_t members = 0;
    for (std::size_t i = 0; i < images.size() && i < labels.size(); ++i) {
      if (labels[i] != o.class_index) continue;
      const Tensor x = fit_input(images[i], net.input_shape());
      for (std::size_t k = 0; k < x.size(); ++k) mean[k] += x[k];
      ++members;
    }
    if (members == 0) throw std::runtime_error("no images of the requested class");
    for (double& v : mean.values()) v /= static_cast<double>(members);
    objective.regularizer = L2Mean{o.lambda, mean};
  } else if (o.regularizer == "expert") {
    const ModelFile source = o.expert.empty() ? model : load_model_file(o.expert);
    if (!source.expert) throw std::runtime_error("model file has no expert");
    objective.regularizer = ExpertPrior{*source.expert};
  } else {
    throw UsageError("unknown regularizer '" + o.regularizer + "'");
  }
  AmOptions opt;
  opt.step_size = o.step_size;
  opt.max_iterations = o.iterations;
  opt.gradient_tolerance = o.tolerance;
  opt.init_noise = o.init_noise;
  opt.seed = seed;
  if (o.eta > 0.0) {
    if (!o.anchor_index || o.images.empty()) throw UsageError("--eta needs --anchor-index and --images");
    objective.localization = Localization{o.eta, fit_input(load_image(o.images, *o.anchor_index), net.input_shape())};
  }
  const AmResult result = activation_maximize(net, objective, opt);
  if (!o.out.empty()) write_text(o.out, tensor_to_csv(result.prototype));
  if (!o.render.empty() && result.prototype.rank() >= 2) {
    write_text(o.render, encode_ppm(grayscale(result.prototype)));
  }
  print_summary(out, {{"class_probability", format_double(result.class_probability)},
                      {"objective", format_double(result.trajectory.back())},
                      {"iterations", std::to_string(result.iterations)}});
  return 0;
}

int cmd_evaluate(const EvaluateOptions& o, std::uint64_t seed, std::ostream& out) {
  if (!o.pixel_flip && !o.continuity) throw UsageError("evaluate needs --pixel-flip and/or --continuity");
  const ModelFile model = load_model_file(o.model);
  const Network& net = model.network;
  const auto images = idx_images(load_idx(o.images));
  if (o.index + o.count > images.size() || o.count == 0) throw std::out_of_range("image range out of bounds");
  std::vector<Tensor> inputs;
  for (std::size_t i = o.index; i < o.index + o.count; ++i) inputs.push_back(fit_input(images[i], net.input_shape()));

  std::vector<std::pair<std::string, std::string>> summary;
  if (o.pixel_flip) {
    FlipConfig config;
    config.granularity = o.patch <= 1 ? FlipGranularity::Feature : FlipGranularity::Patch;
    config.patch = std::max<std::size_t>(o.patch, 1);
    config.fill = o.fill;
    std::vector<double> mean_curve;
    double mean_auc = 0.0;
    const Explainer explainer = o.method == "random" ? Explainer{}
                                                     : make_explainer(o.method, o.rule, o.epsilon, model, o.class_index);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const std::size_t c = o.class_index.value_or(predict(net, inputs[i]));
      FlipCurve curve;
      if (o.method == "random") {
        const std::size_t regions = flip_regions(inputs[i].shape(), config).size();
        curve = pixel_flip_order(net, inputs[i], random_order(regions, Rng::derive(seed, i).next()), c, config);
      } else {
        curve = pixel_flip(net, inputs[i], explainer(net, inputs[i]), c, config);
      }
      if (mean_curve.empty()) mean_curve.assign(curve.values.size(), 0.0);
      for (std::size_t s = 0; s < curve.values.size(); ++s) mean_curve[s] += curve.values[s] / inputs.size();
      mean_auc += curve.auc / inputs.size();
    }
    FlipCurve mean;
    mean.values = mean_curve;
    mean.auc = auc(mean_curve);
    if (!o.out.empty()) write_text(o.out, curve_to_csv(mean));
    summary.emplace_back("mean_auc", format_double(mean_auc));
  }
  if (o.continuity) {
    if (o.method == "random") throw UsageError("--continuity needs an explanation method");
    const Explainer explainer = make_explainer(o.method, o.rule, o.epsilon, model, o.class_index);
    summary.emplace_back("continuity_lower_bound",
                         format_double(continuity_estimate(explainer, net, inputs, o.delta, o.trials, seed)));
  }
  print_summary(out, summary);
  return 0;
}

int cmd_render(const RenderOptions& o) {
  const Heatmap h = heatmap_from_csv(read_text(o.heatmap));
  Colormap map;
  if (o.colormap == "diverging") {
    map = Colormap::Diverging;
  } else if (o.colormap == "red") {
    map = Colormap::SequentialRed;
  } else {
    throw UsageError("unknown colormap '" + o.colormap + "'");
  }
  write_text(o.out, encode_ppm(render_heatmap(h, map)));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"relkit: explain, interpret and evaluate small ReLU networks", "relkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool seed_given = false;

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train a network with minibatch SGD");
  t->add_option("--images", train.images, "IDX image file")->required();
  t->add_option("--labels", train.labels, "IDX label file")->required();
  t->add_option("--arch", train.arch, "layer list, e.g. conv:8:5,relu,sumpool:2,flatten,dense:2")->required();
  t->add_option("--classes", train.classes, "class count (default: max label + 1)");
  t->add_option("--epochs", train.config.epochs);
  t->add_option("--lr", train.config.learning_rate);
  t->add_option("--batch", train.config.batch_size);
  t->add_flag("--nonpositive-bias", train.config.nonpositive_bias, "clamp biases to <= 0");
  t->add_option("--bounds", train.bounds, "store input bounds lo:hi for the ZB rule");
  t->add_option("--out", train.out, "model JSON output")->required();

  ExplainOptions ex;
  auto* e = app.add_subcommand("explain", "explain one prediction");
  e->add_option("--model", ex.model)->required();
  e->add_option("--images", ex.images, "IDX image file")->required();
  e->add_option("--index", ex.index);
  e->add_option("--method", ex.method)->check(CLI::IsMember({"sensitivity", "taylor", "lrp"}));
  e->add_option("--rule", ex.rule)
      ->check(CLI::IsMember({"deeptaylor", "deeptaylor-nonnegative", "alpha1beta0", "alpha2beta1", "epsilon"}));
  e->add_option("--epsilon", ex.epsilon);
  e->add_option("--class", ex.class_index);
  e->add_option("--filter", ex.filter, "layer:index, keep only relevance flowing through one unit");
  e->add_option("--translate", ex.translate, "average over shifts of up to k pixels");
  e->add_option("--sliding-window", ex.sliding_window, "explain a larger image with this window stride");
  e->add_option("--pattern", ex.pattern, "write image * normalized heatmap as PPM");
  e->add_option("--render", ex.render, "write the heatmap as PPM");
  e->add_option("--out", ex.out, "heatmap CSV output");

  PrototypeOptions pr;
  auto* p = app.add_subcommand("prototype", "activation maximization");
  p->add_option("--model", pr.model)->required();
  p->add_option("--class", pr.class_index)->required();
  p->add_option("--regularizer", pr.regularizer)->check(CLI::IsMember({"none", "l2", "l2mean", "expert"}));
  p->add_option("--lambda", pr.lambda);
  p->add_option("--eta", pr.eta);
  p->add_option("--anchor-index", pr.anchor_index, "image used as localization anchor");
  p->add_option("--expert", pr.expert, "model JSON holding the expert (default: --model)");
  p->add_option("--images", pr.images);
  p->add_option("--labels", pr.labels);
  p->add_option("--step-size", pr.step_size);
  p->add_option("--iterations", pr.iterations);
  p->add_option("--tolerance", pr.tolerance);
  p->add_option("--init-noise", pr.init_noise);
  p->add_option("--out", pr.out, "prototype CSV output");
  p->add_option("--render", pr.render, "prototype PPM output");

  EvaluateOptions ev;
  auto* v = app.add_subcommand("evaluate", "pixel-flipping and continuity metrics");
  v->add_option("--model", ev.model)->required();
  v->add_option("--images", ev.images)->required();
  v->add_option("--index", ev.index);
  v->add_option("--count", ev.count);
  v->add_option("--method", ev.method)->check(CLI::IsMember({"sensitivity", "taylor", "lrp", "random"}));
  v->add_option("--rule", ev.rule)
      ->check(CLI::IsMember({"deeptaylor", "deeptaylor-nonnegative", "alpha1beta0", "alpha2beta1", "epsilon"}));
  v->add_option("--epsilon", ev.epsilon);
  v->add_option("--class", ev.class_index);
  v->add_flag("--pixel-flip", ev.pixel_flip);
  v->add_option("--patch", ev.patch);
  v->add_option("--fill", ev.fill);
  v->add_flag("--continuity", ev.continuity);
  v->add_option("--delta", ev.delta);
  v->add_option("--trials", ev.trials);
  v->add_option("--out", ev.out, "mean flip curve CSV");

  RenderOptions re;
  auto* r = app.add_subcommand("render", "render a heatmap CSV as PPM");
  r->add_option("--heatmap", re.heatmap)->required();
  r->add_option("--colormap", re.colormap)->check(CLI::IsMember({"diverging", "red"}));
  r->add_option("--out", re.out)->required();

  for (CLI::App* sub : {t, e, p, v, r}) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed = s, seed_given = true; }, "random seed (default: $RK_SEED or 1)");
  }

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& h) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    if (!seed_given) seed = default_seed();
    train.config.seed = seed;
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_explain(ex, out);
    if (*p) return cmd_prototype(pr, seed, out);
    if (*v) return cmd_evaluate(ev, seed, out);
    if (*r) return cmd_render(re);
  } catch (const UsageError& u) {
    err << "error: " << u.what() << "\n";
    return 2;
  } catch (const std::exception& ex_) {
    err << "error: " << ex_.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace relkit
