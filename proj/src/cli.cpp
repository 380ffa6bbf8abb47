#include "enes/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "enes/error.hpp"
#include "enes/eval.hpp"
#include "enes/field.hpp"
#include "enes/oracle.hpp"
#include "enes/random.hpp"
#include "enes/train.hpp"

namespace enes {

namespace fs = std::filesystem;

namespace {

struct KeySpec {
  const char* key;
  const char* value;
  const char* help;
};

// "auto" model values are filled from the preset.
const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"seed", "0", "root seed"},
      // model
      {"preset", "auto", "model preset: auto, 2d, sphere-constant, sphere-obstacle"},
      {"hidden", "auto", "hidden width D"},
      {"heads", "auto", "attention heads H"},
      {"latents", "auto", "latent cloud size N"},
      {"context_dim", "auto", "context dimension d"},
      {"frequencies", "auto", "Fourier feature count"},
      {"query_freq_std", "auto", "query feature std"},
      {"value_freq_std", "auto", "value feature std"},
      {"v_min", "auto", "lower velocity bound"},
      {"v_max", "auto", "upper velocity bound"},
      // training
      {"batch_fields", "8", "fields per step"},
      {"pairs", "256", "pairs per field and step"},
      {"epochs", "500", "epochs"},
      {"lr_model", "1e-4", "parameter learning rate"},
      {"lr_context", "1e-2", "context learning rate"},
      {"lr_pose", "1e-3", "pose learning rate"},
      {"cosine", "false", "cosine decay of lr_model"},
      {"lr_min", "1e-6", "cosine floor"},
      {"loss", "abs", "abs or logcosh"},
      {"holdout_fraction", "0.2", "validation fraction"},
      {"validate_every", "10", "epochs between validations"},
      {"validation_pairs", "512", "pairs per validation batch"},
      {"holdout_fit_steps", "20", "latent steps on held-out fields before validation"},
      {"inner_steps", "5", "meta inner steps"},
      {"inner_lr_context", "30", "initial inner context rate"},
      {"inner_lr_pose", "2", "initial inner pose rate"},
      {"lr_inner", "1e-3", "outer rate of the log inner rates"},
      {"fit_steps", "100", "latent steps in steps mode"},
      {"fit_mode", "auto", "auto, meta or steps"},
      // generation
      {"kind", "constant", "constant, layered, linear or obstacle"},
      {"domain", "square", "square or sphere"},
      {"dims", "48,48", "grid dims"},
      {"count", "1", "fields to generate"},
      {"v_lo", "0.1", "lower speed"},
      {"v_hi", "2.0", "upper speed"},
      {"layers", "3", "layer count"},
      {"speeds", "", "explicit layer speeds"},
      {"min_layer_gap", "0.12", "smallest interface gap (fraction of extent)"},
      {"v0", "1.0", "linear field speed at depth 0"},
      {"gradient", "1.0", "linear field gradient"},
      {"bumps", "1", "obstacle bumps"},
      {"kappa_lo", "1.0", "obstacle concentration low"},
      {"kappa_hi", "5.0", "obstacle concentration high"},
      // evaluation and oracles
      {"sources", "4", "evaluation sources per field"},
      {"resolution", "64", "reference grid resolution"},
      {"re_form", "squared", "squared or literal"},
      {"fit", "false", "fit latents before evaluating"},
      {"latent", "0", "latent index in the checkpoint"},
      {"angle", "1.5707963267948966", "steering rotation angle"},
      {"tx", "0", "steering translation x"},
      {"ty", "0", "steering translation y"},
      {"probes", "1000", "probe pairs"},
      {"alpha", "1e-3", "geodesic step"},
      {"stop", "2e-3", "geodesic stop gap"},
      {"max_steps", "10000", "geodesic step limit"},
      {"step", "normalized", "normalized or literal geodesic steps"},
  };
  return table;
}

const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& k : key_table())
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || !std::isfinite(v)) throw UsageError(key + ": not a number: '" + text + "'");
  return v;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

Point parse_point(const std::string& what, const std::string& text) {
  const std::vector<double> v = parse_list(what, text);
  if (v.size() < 2 || v.size() > 3) throw UsageError(what + ": expected 2 or 3 comma-separated coordinates");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---- run context --------------------------------------------------------------------------

struct Context {
  std::string command;
  RunConfig config;
  int threads = 1;
  std::vector<std::string> fields;
  std::string checkpoint;
  std::string init;
  std::string out;
  std::string log;
  std::string source;
  std::string target;
  std::ostream* out_stream = nullptr;
  std::ostream* err_stream = nullptr;

  std::ostream& os() const { return *out_stream; }
};

void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_output(const std::string& path) {
  if (path.empty()) throw UsageError("missing --out");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

ModelConfig preset_named(const std::string& name) {
  if (name == "2d") return preset_2d();
  if (name == "sphere-constant") return preset_sphere_constant();
  if (name == "sphere-obstacle") return preset_sphere_obstacle();
  throw UsageError("unknown preset: " + name);
}

// Resolves "auto" model keys; the effective values are written back so the
// printed config and the hash describe the actual run.
ModelConfig model_config(RunConfig& cfg, const Manifold& domain) {
  std::string preset = cfg.get("preset");
  if (preset == "auto") preset = domain.is_sphere() ? "sphere-constant" : "2d";
  ModelConfig c = preset_named(preset);
  if (c.domain.is_sphere() != domain.is_sphere()) throw UsageError("preset " + preset + " does not match the field domain");
  c.domain = domain;
  cfg.set("preset", preset);
  auto int_key = [&](const char* key, int& field) {
    if (cfg.get(key) == "auto") cfg.set(key, std::to_string(field));
    field = cfg.get_int(key);
  };
  auto dbl_key = [&](const char* key, double& field) {
    if (cfg.get(key) == "auto") {
      std::ostringstream s;
      s << std::setprecision(17) << field;
      cfg.set(key, s.str());
    }
    field = cfg.get_double(key);
  };
  int_key("hidden", c.hidden);
  int_key("heads", c.heads);
  int_key("latents", c.latents);
  int_key("context_dim", c.context_dim);
  int_key("frequencies", c.frequencies);
  dbl_key("query_freq_std", c.query_freq_std);
  dbl_key("value_freq_std", c.value_freq_std);
  dbl_key("v_min", c.v_min);
  dbl_key("v_max", c.v_max);
  c.validate();
  return c;
}

TrainConfig train_config(const Context& ctx) {
  const RunConfig& cfg = ctx.config;
  TrainConfig t;
  t.batch_fields = cfg.get_int("batch_fields");
  t.pairs = cfg.get_int("pairs");
  t.epochs = cfg.get_int("epochs");
  t.lr_model = cfg.get_double("lr_model");
  t.lr_context = cfg.get_double("lr_context");
  t.lr_pose = cfg.get_double("lr_pose");
  t.cosine = cfg.get_bool("cosine");
  t.lr_min = cfg.get_double("lr_min");
  const std::string loss = cfg.get("loss");
  if (loss != "abs" && loss != "logcosh") throw UsageError("loss must be abs or logcosh");
  t.loss = loss == "abs" ? LossKind::Abs : LossKind::LogCosh;
  t.seed = cfg.get_u64("seed");
  t.threads = ctx.threads;
  t.holdout_fraction = cfg.get_double("holdout_fraction");
  t.validate_every = cfg.get_int("validate_every");
  t.validation_pairs = cfg.get_int("validation_pairs");
  t.holdout_fit_steps = cfg.get_int("holdout_fit_steps");
  t.inner_steps = cfg.get_int("inner_steps");
  t.inner_lr_context = cfg.get_double("inner_lr_context");
  t.inner_lr_pose = cfg.get_double("inner_lr_pose");
  t.lr_inner = cfg.get_double("lr_inner");
  t.fit_steps = cfg.get_int("fit_steps");
  t.log_path = ctx.log;
  try {
    t.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  return t;
}

FitMode fit_mode(const RunConfig& cfg, const Checkpoint& c) {
  const std::string m = cfg.get("fit_mode");
  if (m == "meta") return FitMode::MetaInner;
  if (m == "steps") return FitMode::AutodecodeSteps;
  if (m == "auto") return c.inner_log_lr.size() > 0 ? FitMode::MetaInner : FitMode::AutodecodeSteps;
  throw UsageError("fit_mode must be auto, meta or steps");
}

std::vector<VelocityField> load_fields(const Context& ctx) {
  if (ctx.fields.empty()) throw UsageError("missing --field");
  std::vector<VelocityField> out;
  for (const std::string& f : ctx.fields) out.push_back(load_vgrid(f));
  for (const VelocityField& v : out) {
    if (v.domain().kind != out.front().domain().kind) throw UsageError("fields live on different domains");
  }
  return out;
}

void print_config(const Context& ctx) {
  ctx.os() << "# enes " << kVersion << ' ' << ctx.command << '\n';
  for (const auto& [k, v] : ctx.config.values()) ctx.os() << k << " = " << v << '\n';
  ctx.os() << "threads = " << ctx.threads << '\n';
}

// Written before any heavy work; the only time-independent record of a run.
void write_manifest(const Context& ctx, const std::vector<std::string>& outputs) {
  if (outputs.empty()) return;
  nlohmann::ordered_json j;
  j["command"] = ctx.command;
  j["version"] = kVersion;
  j["vgrid_version"] = kVgridVersion;
  j["checkpoint_version"] = kCheckpointVersion;
  j["compiler"] = __VERSION__;
  j["seed"] = ctx.config.get_u64("seed");
  j["config_hash"] = ctx.config.hash();
  j["threads"] = ctx.threads;
  j["config"] = ctx.config.values();
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& f : ctx.fields) j["inputs"].push_back(f);
  for (const auto& f : {ctx.checkpoint, ctx.init})
    if (!f.empty()) j["inputs"].push_back(f);
  j["outputs"] = outputs;
  std::ofstream out(outputs.front() + ".manifest.json");
  if (!out) throw Error("cannot write manifest beside " + outputs.front());
  out << j.dump(2) << '\n';
}

void print_history(const Context& ctx, const TrainResult& r) {
  for (const EpochRecord& e : r.history) {
    if (!std::isnan(e.val_loss)) {
      ctx.os() << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << '\n';
    }
  }
  ctx.os() << "best epoch " << r.best_epoch << " val " << r.best_val_loss << '\n';
}

// ---- subcommands --------------------------------------------------------------------------

int cmd_gen(Context& ctx) {
  require_output(ctx.out);
  const RunConfig& cfg = ctx.config;
  GeneratorParams g;
  const std::string kind = cfg.get("kind");
  if (kind == "constant") g.kind = GeneratorKind::Constant;
  else if (kind == "layered") g.kind = GeneratorKind::Layered;
  else if (kind == "linear") g.kind = GeneratorKind::LinearGradient;
  else if (kind == "obstacle") g.kind = GeneratorKind::GaussianObstacle;
  else throw UsageError("kind must be constant, layered, linear or obstacle");
  const std::string domain = cfg.get("domain");
  if (domain == "square") g.domain = Manifold::unit_square();
  else if (domain == "sphere") g.domain = Manifold::sphere();
  else throw UsageError("domain must be square or sphere");
  g.dims.clear();
  for (double d : cfg.get_list("dims")) g.dims.push_back(static_cast<int>(d));
  g.v_lo = cfg.get_double("v_lo");
  g.v_hi = cfg.get_double("v_hi");
  g.layers = cfg.get_int("layers");
  g.speeds = cfg.get_list("speeds");
  g.min_layer_gap = cfg.get_double("min_layer_gap");
  g.v0 = cfg.get_double("v0");
  g.gradient = cfg.get_double("gradient");
  g.bumps = cfg.get_int("bumps");
  g.kappa_lo = cfg.get_double("kappa_lo");
  g.kappa_hi = cfg.get_double("kappa_hi");
  const int count = cfg.get_int("count");
  if (count < 1) throw UsageError("count must be >= 1");

  std::vector<std::string> paths;
  if (count == 1) {
    paths.push_back(ctx.out);
  } else {
    const fs::path p(ctx.out);
    for (int i = 0; i < count; ++i) {
      paths.push_back((p.parent_path() / (p.stem().string() + "_" + std::to_string(i) + p.extension().string())).string());
    }
  }
  print_config(ctx);
  write_manifest(ctx, paths);
  const std::uint64_t seed = cfg.get_u64("seed");
  for (int i = 0; i < count; ++i) {
    const VelocityField v = generate(g, count == 1 ? seed : derive_seed(seed, "gen", static_cast<std::uint64_t>(i)));
    save_vgrid(paths[i], v);
    ctx.os() << "wrote " << paths[i] << " (" << to_string(v.kind()) << ", v in [" << v.v_min() << ", " << v.v_max()
             << "])\n";
  }
  return kExitOk;
}

int cmd_train(Context& ctx, bool meta) {
  for (const auto& f : ctx.fields) require_input(f, "field file");
  if (!ctx.init.empty()) require_input(ctx.init, "initial checkpoint");
  require_output(ctx.out);
  if (!ctx.log.empty()) require_output(ctx.log);
  const std::vector<VelocityField> fields = load_fields(ctx);
  const ModelConfig model = model_config(ctx.config, fields.front().domain());
  const TrainConfig tc = train_config(ctx);
  print_config(ctx);
  std::vector<std::string> outputs{ctx.out};
  if (!ctx.log.empty()) outputs.push_back(ctx.log);
  write_manifest(ctx, outputs);

  TrainResult r;
  if (meta) {
    Checkpoint warm;
    if (!ctx.init.empty()) warm = load_checkpoint(ctx.init);
    r = meta_train(fields, model, tc, ctx.init.empty() ? nullptr : &warm.params);
  } else if (!ctx.init.empty()) {
    r = autodecode_from(fields, load_checkpoint(ctx.init).params, tc);
  } else {
    r = autodecode(fields, model, tc);
  }
  print_history(ctx, r);
  Checkpoint c{r.params, r.latents, r.inner_log_lr};
  save_checkpoint(ctx.out, c);
  ctx.os() << "wrote " << ctx.out << '\n';
  return kExitOk;
}

int cmd_fit(Context& ctx) {
  require_input(ctx.checkpoint, "checkpoint");
  for (const auto& f : ctx.fields) require_input(f, "field file");
  require_output(ctx.out);
  const std::vector<VelocityField> fields = load_fields(ctx);
  Checkpoint c = load_checkpoint(ctx.checkpoint);
  const FitMode mode = fit_mode(ctx.config, c);
  TrainConfig tc = train_config(ctx);
  print_config(ctx);
  write_manifest(ctx, {ctx.out});
  Checkpoint result{c.params, {}, c.inner_log_lr};
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const FitResult f = fit_latents(c.params, fields[i], mode, tc, c.inner_log_lr);
    ctx.os() << ctx.fields[i] << ": loss " << f.initial_loss << " -> " << f.final_loss << " in " << f.seconds << " s\n";
    result.latents.push_back(f.latents);
  }
  save_checkpoint(ctx.out, result);
  ctx.os() << "wrote " << ctx.out << '\n';
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  require_input(ctx.checkpoint, "checkpoint");
  for (const auto& f : ctx.fields) require_input(f, "field file");
  require_output(ctx.out);
  const std::vector<VelocityField> fields = load_fields(ctx);
  const Checkpoint c = load_checkpoint(ctx.checkpoint);
  const RunConfig& cfg = ctx.config;
  const bool fit = cfg.get_bool("fit");
  const std::string form_name = cfg.get("re_form");
  if (form_name != "squared" && form_name != "literal") throw UsageError("re_form must be squared or literal");
  const ReForm form = form_name == "squared" ? ReForm::Squared : ReForm::Literal;
  const int sources = cfg.get_int("sources"), resolution = cfg.get_int("resolution");
  if (!fit && c.latents.size() < fields.size()) {
    throw UsageError("checkpoint has fewer latents than fields; set fit = true");
  }
  const FitMode mode = fit ? fit_mode(cfg, c) : FitMode::AutodecodeSteps;
  const TrainConfig tc = train_config(ctx);
  print_config(ctx);
  const std::string csv = ctx.out + ".csv", json = ctx.out + ".json";
  write_manifest(ctx, {csv, json});

  EvalReport report;
  report.form = form;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    PoseContextCloud z;
    if (fit) {
      const FitResult f = fit_latents(c.params, fields[i], mode, tc, c.inner_log_lr);
      report.fit_seconds += f.seconds;
      z = f.latents;
    } else {
      z = c.latents[i];
    }
    const auto refs = reference_times(fields[i], default_sources(fields[i].domain(), sources), resolution);
    const FieldEval e = evaluate_field(fs::path(ctx.fields[i]).filename().string(), c.params, z, refs, form);
    ctx.os() << e.name << ": RE " << e.re << " RMAE " << e.rmae << '\n';
    report.add(e);
  }
  ctx.os() << "mean RE " << report.mean_re << " mean RMAE " << report.mean_rmae << '\n';
  write_report_csv(csv, report);
  write_report_json(json, report);
  ctx.os() << "wrote " << csv << " and " << json << '\n';
  return kExitOk;
}

const PoseContextCloud& pick_latent(const Checkpoint& c, int index) {
  if (index < 0 || index >= static_cast<int>(c.latents.size())) throw UsageError("latent index out of range");
  return c.latents[static_cast<std::size_t>(index)];
}

GroupElement steering_element(const RunConfig& cfg, GroupKind kind) {
  const double angle = cfg.get_double("angle");
  switch (kind) {
    case GroupKind::SE2:
      return GroupElement::se2(cfg.get_double("tx"), cfg.get_double("ty"), angle);
    case GroupKind::SO2aboutZ:
      return GroupElement::so2_about_z(angle);
    default:
      throw UsageError("steer supports SE2 and SO2aboutZ checkpoints");
  }
}

int cmd_steer(Context& ctx) {
  require_input(ctx.checkpoint, "checkpoint");
  for (const auto& f : ctx.fields) require_input(f, "field file");
  require_output(ctx.out);
  const Checkpoint c = load_checkpoint(ctx.checkpoint);
  const RunConfig& cfg = ctx.config;
  const PoseContextCloud& z = pick_latent(c, cfg.get_int("latent"));
  const GroupElement g = steering_element(cfg, z.kind);
  const int probes = cfg.get_int("probes");
  if (probes < 1) throw UsageError("probes must be >= 1");
  print_config(ctx);
  write_manifest(ctx, {ctx.out});

  const Manifold& m = c.params.config.domain;
  const VelocityField base = VelocityField::constant(1.0, m);
  const PairSample pairs = sample_pairs(m, base, probes, derive_seed(cfg.get_u64("seed"), "steer"));
  const double dev = steerability_check(c.params, z, g, pairs.pairs);
  ctx.os() << "steerability max deviation " << dev << '\n';
  if (!ctx.fields.empty()) {
    const VelocityField v = load_vgrid(ctx.fields.front());
    const VelocityField steered = steer_velocity(g, v, ActionClass::Isometric);
    const Eigen::VectorXd rec = recovered_velocities(c.params, act_latents(g, z), pairs.pairs);
    std::vector<double> rel;
    for (int i = 0; i < pairs.size(); ++i) {
      const double truth = steered.sample(pairs.pairs.s.row(i).transpose());
      rel.push_back(std::abs(rec[i] - truth) / truth);
    }
    std::nth_element(rel.begin(), rel.begin() + static_cast<long>(rel.size() / 2), rel.end());
    ctx.os() << "median recovered-velocity deviation " << rel[rel.size() / 2] << '\n';
  }
  Checkpoint result{c.params, {act_latents(g, z)}, c.inner_log_lr};
  save_checkpoint(ctx.out, result);
  ctx.os() << "wrote " << ctx.out << '\n';
  return kExitOk;
}

int cmd_geodesic(Context& ctx) {
  require_input(ctx.checkpoint, "checkpoint");
  require_output(ctx.out);
  if (ctx.source.empty() || ctx.target.empty()) throw UsageError("geodesic needs --source and --target");
  const Checkpoint c = load_checkpoint(ctx.checkpoint);
  const RunConfig& cfg = ctx.config;
  const PoseContextCloud& z = pick_latent(c, cfg.get_int("latent"));
  GeodesicOptions o;
  o.alpha = cfg.get_double("alpha");
  o.stop = cfg.get_double("stop");
  o.max_steps = cfg.get_int("max_steps");
  const std::string step = cfg.get("step");
  if (step != "normalized" && step != "literal") throw UsageError("step must be normalized or literal");
  o.step = step == "normalized" ? GeodesicStep::Normalized : GeodesicStep::Literal;
  const Point s = parse_point("--source", ctx.source), r = parse_point("--target", ctx.target);
  print_config(ctx);
  write_manifest(ctx, {ctx.out});
  const GeodesicPath path = geodesic_trace(c.params, z, s, r, o);
  write_path_csv(ctx.out, path);
  ctx.os() << "wrote " << ctx.out << " (" << path.points.size() << " points, " << path.steps << " steps)\n";
  if (path.partial) {
    *ctx.err_stream << "geodesic did not converge: gap " << path.final_gap << " after " << path.steps << " steps\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_fmm(Context& ctx) {
  for (const auto& f : ctx.fields) require_input(f, "field file");
  require_output(ctx.out);
  if (ctx.fields.size() != 1) throw UsageError("fmm takes exactly one --field");
  if (ctx.source.empty()) throw UsageError("fmm needs --source");
  const VelocityField v = load_vgrid(ctx.fields.front());
  const Point s = parse_point("--source", ctx.source);
  const int resolution = ctx.config.get_int("resolution");
  print_config(ctx);
  write_manifest(ctx, {ctx.out});
  TravelTimeGrid t;
  if (v.domain().is_sphere()) {
    t = sphere_shortest_path(v, s, resolution);
  } else {
    t = fmm_solve(v.kind() == FieldKind::Grid2 ? v : rasterize(v, {resolution, resolution}), s);
  }
  save_time_grid(ctx.out, t);
  const auto [lo, hi] = std::minmax_element(t.times.begin(), t.times.end());
  ctx.os() << "wrote " << ctx.out << " (" << t.dims[0] << "x" << t.dims[1] << ", T in [" << *lo << ", " << *hi
           << "])\n";
  return kExitOk;
}

// ---- selftest -----------------------------------------------------------------------------

bool selftest(std::ostream& os) {
  bool ok = true;
  auto report = [&](const char* name, bool pass, double value) {
    os << (pass ? "PASS " : "FAIL ") << name << " (" << value << ")\n";
    ok = ok && pass;
  };
  const ModelConfig config = preset_2d();
  const ModelParameters p = init_parameters(config, 1);
  const PoseContextCloud z = init_latents(config.domain, config.group, config.latents, config.context_dim, 2);
  Rng rng = make_rng(3, "selftest");
  const PairSample sample = sample_pairs(config.domain, VelocityField::constant(1.0, config.domain), 200, 4);
  const PairBatch& probes = sample.pairs;

  double steer = 0.0;
  for (int k = 0; k < 5; ++k) {
    const GroupElement g = GroupElement::se2(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -3.14, 3.14));
    steer = std::max(steer, steerability_check(p, z, g, probes));
  }
  report("steerability", steer < 1e-9, steer);

  const Eigen::VectorXd fwd = travel_times(probes, z, p);
  const Eigen::VectorXd bwd = travel_times(PairBatch{probes.r, probes.s}, z, p);
  const Eigen::VectorXd self = travel_times(PairBatch{probes.s, probes.s}, z, p);
  report("symmetry", (fwd.array() == bwd.array()).all(), (fwd - bwd).cwiseAbs().maxCoeff());
  report("source condition", (self.array() == 0.0).all(), self.cwiseAbs().maxCoeff());

  double grad = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Point s = probes.s.row(i).transpose(), r = probes.r.row(i).transpose();
    const TimeAndGradients tg = travel_time_with_gradients(s, r, z, p);
    Point fd(2);
    for (int a = 0; a < 2; ++a) {
      Point up = s, dn = s;
      up[a] += 1e-6;
      dn[a] -= 1e-6;
      fd[a] = (travel_time(up, r, z, p) - travel_time(dn, r, z, p)) / 2e-6;
    }
    grad = std::max(grad, (fd - tg.grad_s).norm() / std::max(fd.norm(), 1e-8));
  }
  report("input gradients", grad < 1e-4, grad);

  double inv = 0.0;
  for (int k = 0; k < 100; ++k) {
    const GroupElement h = GroupElement::se2(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -3.14, 3.14));
    const GroupElement gi = pseudo_exp(PoseParams{GroupKind::SE2, z.poses.row(k % z.size()).transpose()});
    const Point s = probes.s.row(k).transpose(), r = probes.r.row(k).transpose();
    const InvariantPair a = invariants(s, r, gi), b = invariants(h.apply(s), h.apply(r), compose(h, gi));
    inv = std::max({inv, (a.s - b.s).cwiseAbs().maxCoeff(), (a.r - b.r).cwiseAbs().maxCoeff()});
  }
  report("joint invariants", inv < 1e-9, inv);

  const VelocityField grid = rasterize(VelocityField::constant(2.0, Manifold::unit_square()), {32, 32});
  const Point src(Eigen::Vector2d(0.5, 0.5));
  const TravelTimeGrid t = fmm_solve(grid, src);
  double fmm = 0.0;
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    const double exact = (t.node_position(i) - src).norm() / 2.0;
    if (exact > 0) fmm = std::max(fmm, std::abs(t.times[i] - exact) / exact);
  }
  report("fmm constant field", fmm < 1e-3, fmm);

  const Checkpoint back = decode_checkpoint(encode_checkpoint(Checkpoint{p, {z}, Mat()}));
  const double ck = (travel_times(probes, back.latents[0], back.params) - fwd).cwiseAbs().maxCoeff();
  report("checkpoint round trip", ck == 0.0, ck);
  return ok;
}

int cmd_selftest(Context& ctx) {
  if (!ctx.out.empty()) require_output(ctx.out);
  print_config(ctx);
  write_manifest(ctx, ctx.out.empty() ? std::vector<std::string>{} : std::vector<std::string>{ctx.out});
  std::ostringstream log;
  const bool ok = selftest(log);
  ctx.os() << log.str();
  if (!ctx.out.empty()) {
    std::ofstream f(ctx.out);
    f << log.str();
  }
  ctx.os() << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

int env_threads() {
  const char* env = std::getenv("ENES_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  int n = 0;
  const auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), n);
  if (ec != std::errc() || *ptr != '\0' || n < 1) throw UsageError("ENES_THREADS must be a positive integer");
  return n;
}

}  // namespace

// ---- RunConfig ----------------------------------------------------------------------------

RunConfig::RunConfig() {
  for (const KeySpec& k : key_table()) values_[k.key] = k.value;
}

bool RunConfig::known(const std::string& key) { return find_key(key) != nullptr; }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const KeySpec& k : key_table()) out.emplace_back(k.key);
  return out;
}

std::string RunConfig::help(const std::string& key) {
  const KeySpec* k = find_key(key);
  return k ? k->help : "";
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path);
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw UsageError("unknown config key: " + key);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key: " + key);
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(key + ": not an integer: '" + s + "'");
  }
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(key + ": not an unsigned integer: '" + s + "'");
  }
  return v;
}

double RunConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw UsageError(key + ": not a boolean: '" + s + "'");
}

std::vector<double> RunConfig::get_list(const std::string& key) const { return parse_list(key, get(key)); }

std::string RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : values_) {
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

// ---- entry --------------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Equivariant neural eikonal solver"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Context ctx;
  ctx.out_stream = &out;
  ctx.err_stream = &err;
  std::string config_path;
  int threads = 0;
  std::map<std::string, std::string> flag_values;
  std::vector<std::pair<std::string, CLI::Option*>> flag_options;

  struct Sub {
    const char* name;
    const char* help;
    bool fields, checkpoint, init, log, points;
  };
  const Sub subs[] = {
      {"gen", "generate velocity fields", false, false, false, false, false},
      {"train", "autodecode parameters and latents", true, false, true, true, false},
      {"meta-train", "meta-learn parameters and inner rates", true, false, true, true, false},
      {"fit", "fit latents to new fields with frozen parameters", true, true, false, false, false},
      {"eval", "evaluate against reference travel times", true, true, false, false, false},
      {"steer", "steer a latent by a group element", true, true, false, false, false},
      {"geodesic", "trace a geodesic by gradient backtracking", false, true, false, false, true},
      {"fmm", "reference travel times from a source", true, false, false, false, true},
      {"selftest", "run the invariant suite", false, false, false, false, false},
  };
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--threads", threads, "worker threads (ENES_THREADS fallback)")->check(CLI::PositiveNumber);
    sub->add_option("--out", ctx.out, std::string(s.name) == "eval" ? "report path prefix" : "output path");
    if (s.fields) sub->add_option("--field", ctx.fields, "velocity field file (repeatable)");
    if (s.checkpoint) sub->add_option("--checkpoint", ctx.checkpoint, "model checkpoint");
    if (s.init) sub->add_option("--init", ctx.init, "initial checkpoint");
    if (s.log) sub->add_option("--log", ctx.log, "per-epoch CSV log");
    if (s.points) {
      sub->add_option("--source", ctx.source, "source point x,y[,z]");
      if (std::string(s.name) == "geodesic") sub->add_option("--target", ctx.target, "target point x,y[,z]");
    }
    for (const KeySpec& k : key_table()) {
      flag_options.emplace_back(k.key, sub->add_option(std::string("--") + k.key, flag_values[k.key], k.help));
    }
  }

  std::vector<const char*> argv{"enes"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ctx.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) ctx.config.merge_file(config_path);
    for (const auto& [key, opt] : flag_options) {
      if (opt->count() > 0) ctx.config.set(key, flag_values[key]);
    }
    ctx.threads = threads > 0 ? threads : env_threads();
    ctx.config.get_u64("seed");

    if (ctx.command == "gen") return cmd_gen(ctx);
    if (ctx.command == "train") return cmd_train(ctx, false);
    if (ctx.command == "meta-train") return cmd_train(ctx, true);
    if (ctx.command == "fit") return cmd_fit(ctx);
    if (ctx.command == "eval") return cmd_eval(ctx);
    if (ctx.command == "steer") return cmd_steer(ctx);
    if (ctx.command == "geodesic") return cmd_geodesic(ctx);
    if (ctx.command == "fmm") return cmd_fmm(ctx);
    return cmd_selftest(ctx);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericDomainError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace enes
