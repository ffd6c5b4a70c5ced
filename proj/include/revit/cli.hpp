#pragma once

#include <iostream>

#include "CLI11.hpp"
#include "revit/analysis.hpp"
#include "revit/config.hpp"

namespace revit::cli {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << std::setprecision(9);
  return f;
}

template <typename V>
void write_matrix_csv(const std::filesystem::path& p, std::span<const V> d, std::size_t rows, std::size_t cols) {
  auto f = open_out(p);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) f << ',';
      f << d[i * cols + j];
    }
    f << '\n';
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

/// Copy of item b along the leading axis.
inline Tensor<float> batch_item(const Tensor<float>& t, std::size_t b) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = shape_numel(s);
  std::vector<float> v(t.data().begin() + static_cast<std::ptrdiff_t>(b * n),
                       t.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
  return Tensor<float>(std::move(s), std::move(v));
}

inline Tensor<float> head_map(const Tensor<float>& layer_maps, std::size_t h) {
  return batch_item(layer_maps, h);
}

/// Patch-token rows of X [N, dim] (class token dropped).
inline Tensor<float> patch_rows(const Tensor<float>& x) {
  const std::size_t n = x.extent(0) - 1, d = x.extent(1);
  std::vector<float> v(x.data().begin() + static_cast<std::ptrdiff_t>(d), x.data().end());
  return Tensor<float>(Shape{n, d}, std::move(v));
}

struct LoadedModel {
  std::string tag;
  std::filesystem::path path;
  Checkpoint<float> ck;
};

inline DataConfig data_config_for(const Checkpoint<float>& ck, const std::string& data_flag) {
  DataConfig d;
  if (ck.run.contains("data")) {
    try {
      from_json(ck.run["data"], d);
    } catch (const ValidationError&) {
      d = DataConfig{};
    }
  }
  if (!data_flag.empty()) d.path = data_flag;
  return d;
}

inline PerturbMode parse_mode_or_usage(const std::string& s) {
  try {
    return parse_perturb_mode(s);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

}  // namespace detail

struct TrainArgs {
  std::string config, data, out, variant, alpha_mode;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
};

/// Resolves the run config from the optional JSON file plus flag overrides.
inline RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig rc;
  try {
    if (!a.config.empty()) rc = load_run_config(a.config);
    if (!a.data.empty()) rc.data.path = a.data;
    if (!a.out.empty()) rc.out = a.out;
    if (!a.variant.empty()) rc.model.variant = parse_variant(a.variant);
    if (!a.alpha_mode.empty()) rc.model.alpha_mode = AlphaMode::parse(a.alpha_mode);
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.batch_size) rc.train.batch_size = *a.batch_size;
    if (a.lr) rc.train.base_lr = *a.lr;
    if (a.seed) {
      rc.model.seed = *a.seed;
      rc.train.seed = *a.seed;
    }
    if (!a.alpha_mode.empty() && a.variant.empty()) rc.model.variant = Variant::revit;
    rc.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return rc;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = resolve_train_config(a);
  auto [train_set, val_set] = load_data(rc.model, rc.data);
  const std::filesystem::path dir(rc.out);
  std::filesystem::create_directories(dir);
  nlohmann::json resolved = rc;
  detail::write_json(dir / "config.json", resolved);
  nlohmann::json meta{{"data", rc.data}};
  auto res = train<float>(rc.model, rc.train, train_set, val_set, dir, meta);
  out << "best_val_acc=" << res.best_val_acc << " epoch=" << res.best_epoch
      << " checkpoint=" << res.best_checkpoint.string() << " metrics=" << res.metrics_csv.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, perturb, pad_anchor, table;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto ck = load_checkpoint<float>(a.ckpt);
  auto dc = detail::data_config_for(ck, a.data);
  if (!a.pad_anchor.empty()) dc.pad_anchor = a.pad_anchor;
  PadAnchor anchor;
  try {
    anchor = parse_pad_anchor(dc.pad_anchor);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = load_eval_data(ck.model, dc);
  out << std::setprecision(10);

  if (a.perturb.empty()) {
    out << "top1=" << evaluate(ck.model, ck.params, ds) << '\n';
    return kExitOk;
  }
  const auto colon = a.perturb.find(':');
  if (colon == std::string::npos) throw UsageError("--perturb expects mode:percent or mode:all");
  const PerturbMode mode = detail::parse_mode_or_usage(a.perturb.substr(0, colon));
  const std::string pct = a.perturb.substr(colon + 1);

  if (pct == "all") {
    const double base = evaluate(ck.model, ck.params, ds);
    out << "top1=" << base << '\n';
    std::ostringstream table;
    table << std::setprecision(10) << "mode,percent,top1,delta\n";
    for (double p : perturb_grid()) {
      PerturbSpec spec{mode, p};
      const double acc = evaluate(ck.model, ck.params, ds, &spec, anchor);
      table << perturb_mode_name(mode) << ',' << p << ',' << acc << ',' << (acc - base) << '\n';
    }
    out << table.str();
    if (!a.table.empty()) {
      auto f = detail::open_out(a.table);
      f << table.str();
    }
    return kExitOk;
  }
  PerturbSpec spec{mode, 0.0};
  try {
    std::size_t used = 0;
    spec.percent = std::stod(pct, &used);
    if (used != pct.size()) throw UsageError("bad perturbation percent '" + pct + "'");
    spec.validate();
  } catch (const std::invalid_argument&) {
    throw UsageError("bad perturbation percent '" + pct + "'");
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  out << "top1=" << evaluate(ck.model, ck.params, ds, &spec, anchor) << '\n';
  return kExitOk;
}

struct AnalyzeArgs {
  std::vector<std::string> ckpts;
  std::string data, metric, out;
  std::size_t samples = 256;
};

namespace detail {

/// Captured traces for a prefix of the evaluation set, one entry per image.
struct Traces {
  std::vector<std::vector<Tensor<float>>> weights;   // [image][layer] -> [H, N, N]
  std::vector<std::vector<Tensor<float>>> features;  // [image][layer] -> [N, dim]
};

inline Traces capture(const Checkpoint<float>& ck, const Dataset& ds, std::size_t samples) {
  Traces tr;
  constexpr std::size_t kChunk = 16;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples; start += kChunk) {
    const std::size_t end = std::min(samples, start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto batch = make_batch<float>(ds, idx, ck.model.input_mean, ck.model.input_std);
    auto rec = model_forward(batch, ck.model, ck.params, true);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::vector<Tensor<float>> w, f;
      for (std::size_t l = 0; l < ck.model.depth; ++l) {
        w.push_back(batch_item(rec.weights[l], b));
        f.push_back(batch_item(rec.features[l], b));
      }
      tr.weights.push_back(std::move(w));
      tr.features.push_back(std::move(f));
    }
  }
  return tr;
}

inline nlohmann::json analyze_nonlocality(const LoadedModel& m, const Traces& tr, const DistanceMatrix& dm,
                                          std::ostream& heads_csv, std::ostream& layers_csv,
                                          std::vector<double>& layer_values) {
  const auto& cfg = m.ck.model;
  const std::size_t L = cfg.depth, H = cfg.heads, S = tr.weights.size();
  std::vector<std::vector<double>> d(L, std::vector<double>(H, 0.0));
  std::vector<double> blend(L, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t l = 0; l < L; ++l) {
      auto r = non_locality_layer(tr.weights[s][l], dm);
      for (std::size_t h = 0; h < H; ++h) d[l][h] += r.heads[h];
      if (cfg.residual_attention() && l > 0) {
        const double a = m.ck.params.alpha.value(l);
        for (std::size_t h = 0; h < H; ++h)
          blend[l] += revit_globality_decomposition(strip_class_token(head_map(tr.weights[s][l], h)),
                                                    strip_class_token(head_map(tr.weights[s][l - 1], h)), a, dm);
      }
    }
  }
  nlohmann::json layers = nlohmann::json::array();
  nlohmann::json decomposition = nlohmann::json::array();
  layer_values.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double mean_l = 0.0;
    std::vector<double> hv(H);
    for (std::size_t h = 0; h < H; ++h) {
      hv[h] = d[l][h] / static_cast<double>(S);
      mean_l += hv[h];
      heads_csv << m.tag << ',' << l << ',' << h << ',' << hv[h] << '\n';
    }
    mean_l /= static_cast<double>(H);
    layer_values[l] = mean_l;
    layers_csv << m.tag << ',' << l << ',' << mean_l << '\n';
    layers.push_back({{"layer", l}, {"D", mean_l}, {"heads", hv}});
    if (cfg.residual_attention() && l > 0) {
      const double b = blend[l] / static_cast<double>(S * H);
      decomposition.push_back({{"layer", l},
                               {"alpha", m.ck.params.alpha.value(l)},
                               {"D_exact", mean_l},
                               {"D_blend", b},
                               {"difference", b - mean_l}});
    }
  }
  bool increasing = true;
  for (std::size_t l = 1; l < L; ++l) increasing = increasing && layer_values[l] >= layer_values[l - 1];
  return {{"tag", m.tag},
          {"checkpoint", m.path.string()},
          {"variant", variant_name(cfg.variant)},
          {"alpha", alpha_report(cfg, m.ck.params)},
          {"layers", layers},
          {"decomposition", decomposition},
          {"observation", {{"D_nondecreasing_with_depth", increasing}}}};
}

}  // namespace detail

inline int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.ckpts.empty() || a.ckpts.size() > 2) throw UsageError("analyze takes one or two --ckpt");
  if (a.metric != "nonlocality" && a.metric != "similarity" && a.metric != "alpha")
    throw UsageError("--metric must be nonlocality, similarity or alpha");
  if (a.samples == 0) throw UsageError("--samples must be positive");
  std::vector<detail::LoadedModel> models;
  for (const auto& p : a.ckpts) models.push_back({"", p, load_checkpoint<float>(p)});
  for (auto& m : models) m.tag = variant_name(m.ck.model.variant);
  if (models.size() == 2 && models[0].tag == models[1].tag) {
    models[0].tag += "_a";
    models[1].tag += "_b";
  }
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);

  if (a.metric == "alpha") {
    auto csv = detail::open_out(dir / "alpha.csv");
    csv << "model,layer,alpha\n";
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& m : models) {
      const auto alphas = alpha_report(m.ck.model, m.ck.params);
      if (alphas.empty())
        err << "notice: " << m.path.string() << " is a vit checkpoint; it has no residual-attention gate\n";
      for (std::size_t l = 0; l < alphas.size(); ++l) csv << m.tag << ',' << l << ',' << alphas[l] << '\n';
      summary.push_back({{"tag", m.tag},
                         {"checkpoint", m.path.string()},
                         {"mode", m.ck.model.residual_attention() ? m.ck.model.alpha_mode.str() : "none"},
                         {"alpha", alphas}});
    }
    detail::write_json(dir / "alpha.json", {{"models", summary}});
    out << "wrote " << (dir / "alpha.csv").string() << '\n';
    return kExitOk;
  }

  const auto& geo = models.front().ck.model;
  for (const auto& m : models)
    if (m.ck.model.image_size != geo.image_size || m.ck.model.patch_size != geo.patch_size ||
        m.ck.model.channels != geo.channels)
      throw ValidationError("analyze: checkpoints have different input geometry");
  const Dataset ds = load_eval_data(geo, detail::data_config_for(models.front().ck, a.data));
  check_geometry(geo, ds);
  const std::size_t samples = std::min(a.samples, ds.size());

  if (a.metric == "nonlocality") {
    const auto dm = build_distance_matrix(geo.grid());
    auto heads_csv = detail::open_out(dir / "nonlocality_heads.csv");
    auto layers_csv = detail::open_out(dir / "nonlocality_layers.csv");
    heads_csv << "model,layer,head,D\n";
    layers_csv << "model,layer,D_layer\n";
    nlohmann::json reports = nlohmann::json::array();
    std::vector<std::vector<double>> curves;
    for (const auto& m : models) {
      auto tr = detail::capture(m.ck, ds, samples);
      std::vector<double> curve;
      reports.push_back(detail::analyze_nonlocality(m, tr, dm, heads_csv, layers_csv, curve));
      curves.push_back(std::move(curve));
    }
    nlohmann::json summary{{"metric", "nonlocality"},
                           {"samples", samples},
                           {"distance", "euclidean, patch-grid units"},
                           {"max_distance", dm.max()},
                           {"class_token", "excluded; remaining rows renormalized over patches"},
                           {"models", reports}};
    if (models.size() == 2) {
      auto cmp = detail::open_out(dir / "nonlocality_compare.csv");
      cmp << "layer,D_" << models[0].tag << ",D_" << models[1].tag << '\n';
      const std::size_t L = std::min(curves[0].size(), curves[1].size());
      std::size_t lower = 0;
      for (std::size_t l = 0; l < L; ++l) {
        cmp << l << ',' << curves[0][l] << ',' << curves[1][l] << '\n';
        if (l > 0 && curves[1][l] < curves[0][l]) ++lower;
      }
      summary["observation"] = {{"layers_after_first_where_second_is_lower", lower},
                                {"layers_after_first", L > 0 ? L - 1 : 0}};
    }
    detail::write_json(dir / "nonlocality.json", summary);
    out << "wrote " << (dir / "nonlocality_layers.csv").string() << '\n';
    return kExitOk;
  }

  // similarity
  auto sum_csv = detail::open_out(dir / "similarity_summary.csv");
  sum_csv << "model,image,layer,mean_similarity\n";
  nlohmann::json reports = nlohmann::json::array();
  std::vector<std::vector<double>> final_sim;
  for (const auto& m : models) {
    auto tr = detail::capture(m.ck, ds, samples);
    const std::filesystem::path sub = dir / "similarity" / m.tag;
    std::filesystem::create_directories(sub);
    const std::size_t L = m.ck.model.depth;
    std::vector<double> mean_per_layer(L, 0.0);
    std::vector<double> finals;
    std::size_t monotone = 0, zero_rows_total = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      double prev = -2.0;
      bool mono = true;
      for (std::size_t l = 0; l < L; ++l) {
        std::size_t zero_rows = 0;
        auto sim = feature_similarity(detail::patch_rows(tr.features[s][l]), &zero_rows);
        zero_rows_total += zero_rows;
        detail::write_matrix_csv(sub / ("img" + std::to_string(s) + "_layer" + std::to_string(l) + ".csv"),
                                 std::span<const double>(sim.data()), sim.extent(0), sim.extent(1));
        const double mo = mean_off_diagonal(sim);
        sum_csv << m.tag << ',' << s << ',' << l << ',' << mo << '\n';
        mean_per_layer[l] += mo / static_cast<double>(samples);
        if (mo < prev) mono = false;
        prev = mo;
        if (l + 1 == L) finals.push_back(mo);
      }
      if (mono) ++monotone;
    }
    if (zero_rows_total) err << "notice: " << zero_rows_total << " zero-norm feature rows given similarity 0\n";
    reports.push_back({{"tag", m.tag},
                       {"checkpoint", m.path.string()},
                       {"variant", variant_name(m.ck.model.variant)},
                       {"mean_similarity_per_layer", mean_per_layer},
                       {"observation",
                        {{"images_with_nondecreasing_similarity", monotone}, {"images", samples}}}});
    final_sim.push_back(std::move(finals));
  }
  nlohmann::json summary{{"metric", "similarity"},
                         {"samples", samples},
                         {"tokens", "patch tokens only (class token excluded)"},
                         {"models", reports}};
  if (models.size() == 2) {
    std::size_t lower = 0;
    for (std::size_t s = 0; s < samples; ++s)
      if (final_sim[1][s] < final_sim[0][s]) ++lower;
    summary["observation"] = {{"images_where_second_final_layer_is_lower", lower}, {"images", samples}};
  }
  detail::write_json(dir / "similarity.json", summary);
  out << "wrote " << (dir / "similarity_summary.csv").string() << '\n';
  return kExitOk;
}

struct ExportArgs {
  std::string ckpt, data, image, out;
};

/// Reads an image reference: a dataset index, a raw float32 [C, H, W] file,
/// or a single label+pixel record.
inline Tensor<float> resolve_image(const ExportArgs& a, const Checkpoint<float>& ck) {
  const auto& cfg = ck.model;
  const bool numeric = !a.image.empty() && std::all_of(a.image.begin(), a.image.end(), ::isdigit);
  if (numeric && !std::filesystem::exists(a.image)) {
    const Dataset ds = load_eval_data(cfg, detail::data_config_for(ck, a.data));
    check_geometry(cfg, ds);
    const std::size_t i = std::stoull(a.image);
    if (i >= ds.size())
      throw ValidationError("image index " + a.image + " out of range (dataset has " + std::to_string(ds.size()) + ")");
    return ds.image(i);
  }
  std::ifstream in(a.image, std::ios::binary);
  if (!in) throw IoError("cannot open image " + a.image);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t px = cfg.channels * cfg.image_size * cfg.image_size;
  Tensor<float> img(Shape{cfg.channels, cfg.image_size, cfg.image_size});
  auto d = img.data();
  if (bytes.size() == px * 4) {
    for (std::size_t k = 0; k < px; ++k) d[k] = std::bit_cast<float>(revit::detail::get_u32(bytes.data() + 4 * k));
  } else if (bytes.size() == px + 1) {
    for (std::size_t k = 0; k < px; ++k) d[k] = static_cast<float>(bytes[1 + k]) / 255.0f;
  } else {
    throw FormatError("image " + a.image + " is neither a raw float32 image nor a single record of the model geometry");
  }
  if (!img.all_finite()) throw FormatError("image " + a.image + " contains non-finite values");
  return img;
}

inline int cmd_export_attn(const ExportArgs& a, std::ostream& out) {
  auto ck = load_checkpoint<float>(a.ckpt);
  const auto& cfg = ck.model;
  auto img = resolve_image(a, ck);
  auto batch = normalize(reshape(img, Shape{1, cfg.channels, cfg.image_size, cfg.image_size}), cfg.input_mean,
                         cfg.input_std);
  auto rec = model_forward(batch, cfg, ck.params, true);
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  const std::size_t N = cfg.tokens();
  nlohmann::json files = nlohmann::json::array();
  std::string all;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto layer = detail::batch_item(rec.weights[l], 0);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      auto m = detail::head_map(layer, h);
      const std::string stem = "attn_l" + std::to_string(l) + "_h" + std::to_string(h);
      detail::write_matrix_csv(dir / (stem + ".csv"), std::span<const float>(m.data()), N, N);
      std::string blob;
      for (float v : m.data()) revit::detail::put_u32(blob, std::bit_cast<std::uint32_t>(v));
      {
        std::ofstream f(dir / (stem + ".f32"), std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + (dir / (stem + ".f32")).string());
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
      }
      all += blob;
      files.push_back({{"layer", l}, {"head", h}, {"csv", stem + ".csv"}, {"f32", stem + ".f32"}});
    }
  }
  {
    std::ofstream f(dir / "attention.f32", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "attention.f32").string());
    f.write(all.data(), static_cast<std::streamsize>(all.size()));
  }
  detail::write_json(dir / "index.json",
                     {{"layers", cfg.depth},
                      {"heads", cfg.heads},
                      {"tokens", N},
                      {"class_token_index", 0},
                      {"dtype", "float32-le"},
                      {"layout", "layer-major, head-major, row-major"},
                      {"combined", "attention.f32"},
                      {"variant", variant_name(cfg.variant)},
                      {"files", files}});
  out << "wrote " << files.size() << " maps to " << dir.string() << '\n';
  return kExitOk;
}

/// Entry point; `args` excludes the program name. Returns the process exit code.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ViT / ReViT training and analysis", "revit"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints plus a metrics log");
  train_cmd->add_option("--config", ta.config, "JSON run config");
  train_cmd->add_option("--data", ta.data, "'synthetic', a CIFAR-10 binary directory, or a record file");
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_option("--variant", ta.variant, "vit | revit");
  train_cmd->add_option("--alpha-mode", ta.alpha_mode, "shared | per_layer | fixed:<v>");
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--batch-size", ta.batch_size);
  train_cmd->add_option("--lr", ta.lr, "Base learning rate");
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and data order");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy, optionally under a perturbation");
  eval_cmd->add_option("--ckpt", ea.ckpt)->required();
  eval_cmd->add_option("--data", ea.data);
  eval_cmd->add_option("--perturb", ea.perturb, "hshift|vshift|scale : percent|all");
  eval_cmd->add_option("--pad-anchor", ea.pad_anchor, "top_left | center | bottom_right");
  eval_cmd->add_option("--table", ea.table, "Also write the sweep table to this file");

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "Non-locality, feature similarity or alpha reports");
  analyze_cmd->add_option("--ckpt", aa.ckpts)->required();
  analyze_cmd->add_option("--data", aa.data);
  analyze_cmd->add_option("--metric", aa.metric)->required();
  analyze_cmd->add_option("--samples", aa.samples);
  analyze_cmd->add_option("--out", aa.out)->required();

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export-attn", "Write per-layer, per-head attention maps");
  export_cmd->add_option("--ckpt", xa.ckpt)->required();
  export_cmd->add_option("--data", xa.data);
  export_cmd->add_option("--image", xa.image)->required();
  export_cmd->add_option("--out", xa.out)->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*analyze_cmd) return cmd_analyze(aa, out, err);
    if (*export_cmd) return cmd_export_attn(xa, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace revit::cli
