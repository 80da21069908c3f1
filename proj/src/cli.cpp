#include "safetypairs/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

#include "safetypairs/codec.hpp"
#include "safetypairs/config.hpp"
#include "safetypairs/edit_planner.hpp"
#include "safetypairs/guard_eval.hpp"
#include "safetypairs/mock_models.hpp"
#include "safetypairs/pipeline.hpp"
#include "safetypairs/probelab.hpp"
#include "safetypairs/review.hpp"
#include "safetypairs/store.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace sp::cli {

namespace {

struct Globals {
  std::string config_path;
  std::string store_path;
};

AppConfig load_config(const Globals& g) {
  AppConfig cfg = g.config_path.empty() ? parse_app_config(json::object(), fs::current_path(), process_env())
                                        : load_app_config(g.config_path);
  if (!g.store_path.empty()) cfg.store_root = g.store_path;
  return cfg;
}

json provenance(const AppConfig& cfg, std::optional<std::uint64_t> seed) {
  return json{{"tool_version", kVersion},
              {"config_hash", cfg.hash()},
              {"seed", seed ? json(*seed) : json(nullptr)},
              {"templates",
               {{"instruction", planner::kInstructionTemplateVersion},
                {"caption", planner::kCaptionTemplateVersion},
                {"guard", guard::kGuardTemplateVersion}}}};
}

void emit(std::ostream& out, const json& j) { out << j.dump(2) << '\n' << std::flush; }

void write_output(const std::string& path, const std::string& data) { write_file_atomic(path, data); }

std::shared_ptr<ModelClient> client_for(const AppConfig& cfg, Role role, std::uint64_t seed) {
  return std::make_shared<ModelClient>(cfg.endpoint_for(role), nullptr, nullptr, seed);
}

void install_crash_hook(Store& store) {
  const char* raw = std::getenv(kCrashEnv);
  if (!raw) return;
  const long limit = std::strtol(raw, nullptr, 10);
  if (limit <= 0) return;
  auto count = std::make_shared<std::atomic<long>>(0);
  store.set_after_append_hook([count, limit] {
    if (++*count >= limit) std::_Exit(kCrashExitCode);
  });
}

int cmd_generate(const Globals& g, const std::string& manifest, std::optional<std::int64_t> seed, std::ostream& out,
                 std::ostream& err) {
  AppConfig cfg = load_config(g);
  if (seed) cfg.pipeline.seed_base = *seed;
  const auto jitter = static_cast<std::uint64_t>(cfg.pipeline.seed_base);
  pipeline::Gateways gw{client_for(cfg, Role::captioner, jitter), client_for(cfg, Role::instructor, jitter),
                        client_for(cfg, Role::editor, jitter), client_for(cfg, Role::vqa, jitter)};
  const PolicySet policies = cfg.policies();
  SourceDataset dataset = load_source_dataset(manifest, policies);

  Store store(cfg.store_root, StoreMode::writer);
  install_crash_hook(store);
  const std::string started = utc_now_iso8601();
  pipeline::RunSummary summary = pipeline::run_pipeline(dataset, cfg.pipeline, gw, store, policies);

  json report = summary;
  report["provenance"] = provenance(cfg, static_cast<std::uint64_t>(cfg.pipeline.seed_base));
  report["provenance"]["pipeline"] = cfg.pipeline;
  report["started_at"] = started;
  report["finished_at"] = utc_now_iso8601();
  write_output((cfg.store_root / "runs" / (utc_now_compact() + ".json")).string(), report.dump(2) + "\n");
  emit(out, report);
  if (summary.errored > 0) {
    err << "generate: " << summary.errored << " source(s) errored; rerun to resume\n";
    return 1;
  }
  return 0;
}

int cmd_finalize(const Globals& g, std::ostream& out) {
  AppConfig cfg = load_config(g);
  Store store(cfg.store_root, StoreMode::writer);
  auto pairs = finalize_pairs(store);
  store.write_pairs(pairs);
  emit(out, json{{"pairs", pairs.size()},
                 {"path", (cfg.store_root / "pairs.jsonl").string()},
                 {"provenance", provenance(cfg, std::nullopt)}});
  return 0;
}

int cmd_stats(const Globals& g, std::ostream& out) {
  AppConfig cfg = load_config(g);
  Store store(cfg.store_root, StoreMode::read_only);
  emit(out, json(compute_yield_stats(store)));
  return 0;
}

int cmd_validate(const Globals& g, std::ostream& out, std::ostream& err) {
  AppConfig cfg = load_config(g);
  Store store(cfg.store_root, StoreMode::read_only);
  auto problems = store.validate();
  emit(out, json{{"ok", problems.empty()}, {"problems", problems}});
  for (const auto& p : problems) err << "validate-store: " << p << '\n';
  return problems.empty() ? 0 : 1;
}

int cmd_eval(const Globals& g, const std::string& endpoint, std::optional<double> threshold, std::uint64_t seed,
             const std::string& out_path, const std::string& csv_path, std::ostream& out) {
  AppConfig cfg = load_config(g);
  if (threshold) cfg.eval.threshold = *threshold;
  const EndpointConfig& ep = endpoint.empty() ? cfg.endpoint_for(Role::guard) : cfg.endpoint_named(endpoint);
  if (ep.role != Role::guard) {
    throw PreconditionError("endpoint '" + ep.name + "' has role '" + to_string(ep.role) + "', not 'guard'");
  }
  Store store(cfg.store_root, StoreMode::read_only);
  auto pairs = store.read_pairs();
  if (pairs.empty()) throw PreconditionError("the store has no finalized pairs; run finalize first");

  guard::GuardClassifier classifier(std::make_shared<ModelClient>(ep, nullptr, nullptr, seed));
  const PolicySet policies = cfg.policies();
  auto preds = guard::gather_predictions(store, pairs, classifier, policies, cfg.eval.threshold, cfg.eval.workers);
  guard::EvalReport report = guard::evaluate_pairs(pairs, preds, ep.name, cfg.eval.threshold);
  json j = report;
  j["provenance"] = provenance(cfg, seed);
  if (!csv_path.empty()) write_output(csv_path, guard::predictions_csv(pairs, preds));
  if (!out_path.empty()) write_output(out_path, j.dump(2) + "\n");
  emit(out, j);
  return 0;
}

probe::ProbeDataset load_probe_dataset(const std::string& path) {
  try {
    return json::parse(read_file(path)).get<probe::ProbeDataset>();
  } catch (const json::exception& e) {
    throw SchemaError("dataset", path + ": " + e.what());
  }
}

int cmd_probe_sweep(const Globals& g, const std::string& embeddings, const std::string& dataset,
                    std::uint64_t seed, std::optional<int> workers, const std::string& out_path,
                    const std::string& csv_path, std::ostream& out) {
  AppConfig cfg = load_config(g);
  probe::SweepConfig sweep = cfg.probe;
  sweep.seed = seed;
  if (workers) sweep.workers = *workers;
  const probe::EmbeddingSet set = probe::load_embedding_set(embeddings);
  const probe::ProbeDataset data = load_probe_dataset(dataset);
  probe::SweepResult result = probe::sample_efficiency_sweep(data, set, sweep);
  json j = result;
  j["provenance"] = provenance(cfg, seed);
  j["provenance"]["embeddings_sha256"] = sha256_hex(read_file(embeddings));
  j["provenance"]["dataset_sha256"] = sha256_hex(read_file(dataset));
  if (!csv_path.empty()) write_output(csv_path, probe::sweep_csv(result));
  if (!out_path.empty()) write_output(out_path, j.dump(2) + "\n");
  emit(out, j);
  return 0;
}

int cmd_probe_synth(const std::string& out_dir, std::uint64_t seed, int points, int dim, std::ostream& out) {
  if (points < 2 || dim < 2) throw PreconditionError("--points and --dim must be >= 2");
  auto fx = probe::make_synthetic_fixture(seed, static_cast<std::size_t>(points), static_cast<std::size_t>(dim));
  const fs::path dir(out_dir);
  probe::save_embedding_cache(dir / "embeddings.bin", fx.dim, fx.embeddings);
  write_file_atomic(dir / "dataset.json", json(fx.dataset).dump(2) + "\n");
  emit(out, json{{"embeddings", (dir / "embeddings.bin").string()},
                 {"dataset", (dir / "dataset.json").string()},
                 {"points", points},
                 {"dim", dim},
                 {"seed", seed}});
  return 0;
}

int cmd_probe_embed(const Globals& g, const std::string& out_path, std::ostream& out) {
  AppConfig cfg = load_config(g);
  auto client = std::make_shared<ModelClient>(cfg.endpoint_for(Role::embedder));
  Store store(cfg.store_root, StoreMode::read_only);
  std::map<std::string, probe::Vec> rows;
  std::size_t dim = 0;
  for (const auto& p : store.read_pairs()) {
    for (const auto& hash : {p.unsafe_hash, p.safe_hash}) {
      if (rows.count(hash)) continue;
      auto path = store.image_path_by_hash(hash);
      if (!path) throw NotFoundError("image " + hash + " is not in the store");
      rows[hash] = client->embed_image(read_bytes(*path));
      dim = rows[hash].size();
    }
  }
  if (rows.empty()) throw PreconditionError("the store has no finalized pairs; run finalize first");
  probe::save_embedding_cache(out_path, dim, rows);
  emit(out, json{{"embeddings", out_path}, {"count", rows.size()}, {"d", dim}, {"provenance", provenance(cfg, {})}});
  return 0;
}

int cmd_probe_similarity(const Globals& g, const std::string& embeddings, const std::string& dataset,
                         std::ostream& out) {
  AppConfig cfg = load_config(g);
  Store store(cfg.store_root, StoreMode::read_only);
  const probe::EmbeddingSet set = probe::load_embedding_set(embeddings);
  const probe::ProbeDataset data = load_probe_dataset(dataset);
  json j = probe::pair_similarity_study(store.read_pairs(), data.items, set);
  j["provenance"] = provenance(cfg, std::nullopt);
  emit(out, j);
  return 0;
}

int cmd_mock_serve(const std::string& scenario, int port, const std::string& host, std::ostream& out) {
  auto server = mock::MockServer::serve(mock::load_scenario(scenario), port, host);
  emit(out, json{{"base_url", server->base_url()}, {"port", server->port()}});
  server->wait();
  return 0;
}

int cmd_review_serve(const Globals& g, int port, const std::string& host, const std::string& static_dir,
                     std::ostream& out) {
  AppConfig cfg = load_config(g);
  Store store(cfg.store_root, StoreMode::writer);
  const PolicySet policies = cfg.policies();
  review::ReviewService service(store, policies);
  review::ReviewServer::Options opts;
  opts.host = host;
  opts.port = port;
  if (!static_dir.empty()) opts.static_dir = static_dir;
  if (const char* tok = std::getenv("SAFETYPAIRS_REVIEW_TOKEN")) opts.bearer_token = tok;
  auto server = review::ReviewServer::serve(service, opts);
  emit(out, json{{"base_url", server->base_url()}, {"port", server->port()}});
  server->wait();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactual safety image-pair production and guard evaluation", "safetypairs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--store", g.store_path, "Store directory (overrides store_root)");

  std::string manifest;
  std::optional<std::int64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Run the edit pipeline over a source manifest");
  gen->add_option("--manifest", manifest, "Source manifest (JSONL)")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "Seed base for edits and instructor sampling");

  int review_port = 8080;
  std::string review_host = "127.0.0.1";
  std::string static_dir;
  auto* rev = app.add_subcommand("review-serve", "Serve the review API and static UI");
  rev->add_option("--port", review_port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  rev->add_option("--host", review_host, "Bind address");
  rev->add_option("--static-dir", static_dir, "Directory served at /")->check(CLI::ExistingDirectory);

  auto* fin = app.add_subcommand("finalize", "Write pairs.jsonl from accepted candidates");
  auto* stats = app.add_subcommand("stats", "Print yield statistics as JSON");
  auto* val = app.add_subcommand("validate-store", "Check store integrity");

  std::string eval_endpoint, eval_out, eval_csv;
  std::optional<double> eval_threshold;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a guard endpoint on finalized pairs");
  ev->add_option("--endpoint", eval_endpoint, "Guard endpoint name (default: first guard endpoint)");
  ev->add_option("--threshold", eval_threshold, "Decision threshold on p(unsafe)")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--seed", eval_seed, "Seed for retry jitter");
  ev->add_option("--out", eval_out, "Also write the report here");
  ev->add_option("--csv", eval_csv, "Write per-image predictions as CSV");

  auto* probe_cmd = app.add_subcommand("probe", "Embedding analyses and linear probes");
  probe_cmd->require_subcommand(1);
  std::string emb_path, data_path, sweep_out, sweep_csv_path;
  std::uint64_t sweep_seed = 0;
  std::optional<int> sweep_workers;
  auto* sweep = probe_cmd->add_subcommand("sweep", "Sample-efficiency sweep with and without pair augmentation");
  sweep->add_option("--embeddings", emb_path, "Embedding cache (.bin with .bin.json index)")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--dataset", data_path, "Probe dataset JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--seed", sweep_seed, "Seed for balancing, folds and sampling");
  sweep->add_option("--workers", sweep_workers, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_out, "Also write the result JSON here");
  sweep->add_option("--csv", sweep_csv_path, "Write per-cell results as CSV");

  std::string synth_dir;
  std::uint64_t synth_seed = 0;
  int synth_points = 200, synth_dim = 16;
  auto* synth = probe_cmd->add_subcommand("synth", "Write a synthetic embedding fixture");
  synth->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--points", synth_points, "Base points, split evenly by class");
  synth->add_option("--dim", synth_dim, "Embedding dimension");

  std::string embed_out;
  auto* embed = probe_cmd->add_subcommand("embed", "Embed every finalized pair image through the embedder endpoint");
  embed->add_option("--out", embed_out, "Embedding cache path")->required();

  std::string sim_emb, sim_data;
  auto* sim = probe_cmd->add_subcommand("similarity", "Pair similarity vs nearest opposite-class baseline");
  sim->add_option("--embeddings", sim_emb, "Embedding cache")->required()->check(CLI::ExistingFile);
  sim->add_option("--dataset", sim_data, "Probe dataset JSON used as the baseline pool")
      ->required()
      ->check(CLI::ExistingFile);

  std::string scenario;
  int mock_port = 0;
  std::string mock_host = "127.0.0.1";
  auto* mock_cmd = app.add_subcommand("mock-serve", "Serve scripted model endpoints");
  mock_cmd->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  mock_cmd->add_option("--port", mock_port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  mock_cmd->add_option("--host", mock_host, "Bind address");

  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();
  probe_cmd->fallthrough();
  for (auto* sub : {sweep, synth, embed, sim}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*gen) return cmd_generate(g, manifest, gen_seed, out, err);
    if (*rev) return cmd_review_serve(g, review_port, review_host, static_dir, out);
    if (*fin) return cmd_finalize(g, out);
    if (*stats) return cmd_stats(g, out);
    if (*val) return cmd_validate(g, out, err);
    if (*ev) return cmd_eval(g, eval_endpoint, eval_threshold, eval_seed, eval_out, eval_csv, out);
    if (*sweep) return cmd_probe_sweep(g, emb_path, data_path, sweep_seed, sweep_workers, sweep_out, sweep_csv_path, out);
    if (*synth) return cmd_probe_synth(synth_dir, synth_seed, synth_points, synth_dim, out);
    if (*embed) return cmd_probe_embed(g, embed_out, out);
    if (*sim) return cmd_probe_similarity(g, sim_emb, sim_data, out);
    if (*mock_cmd) return cmd_mock_serve(scenario, mock_port, mock_host, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace sp::cli
