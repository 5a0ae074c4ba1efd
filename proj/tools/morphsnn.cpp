#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "morphsnn/cli.hpp"

using namespace morphsnn;

int main(int argc, char** argv) {
  CLI::App app{"MorphSNN dynamic-graph spiking network engine"};
  app.require_subcommand(1);

  cli::GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic event-frame dataset");
  g->add_option("--kind", gen.kind, "moving-bar or flicker-pattern")->capture_default_str();
  g->add_option("--classes", gen.classes)->capture_default_str();
  g->add_option("--per-class", gen.per_class)->capture_default_str();
  g->add_option("--timesteps", gen.dims.timesteps)->capture_default_str();
  g->add_option("--channels", gen.dims.channels)->capture_default_str();
  g->add_option("--height", gen.dims.height)->capture_default_str();
  g->add_option("--width", gen.dims.width)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "Output .msnn file")->required();

  cli::TrainOptions tr;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train a network and write checkpoint and metrics");
  t->add_option("--config", tr.config, "JSON training config");
  t->add_option("--data", tr.data, "Training .msnn file")->required();
  t->add_option("--test", tr.test, "Test .msnn file");
  t->add_option("--out", tr.out_dir, "Output directory")->required();
  auto* seed_opt = t->add_option("--seed", train_seed, "Overrides the config seed (default 2020)");

  cli::DiffusionOptions dif;
  auto* d = app.add_subcommand("diffusion-analyze", "Dirichlet-energy profile of graph diffusion");
  d->add_option("--nodes", dif.nodes)->capture_default_str();
  d->add_option("--steps", dif.steps)->capture_default_str();
  d->add_option("--graph", dif.graph, "random, path or complete")->capture_default_str();
  d->add_option("--signal", dif.signal, "random or antisymmetric")->capture_default_str();
  d->add_option("--channels", dif.channels)->capture_default_str();
  d->add_option("--topk", dif.topk, "Retained entries per row (random graph)")->capture_default_str();
  d->add_option("--seed", dif.seed)->capture_default_str();
  d->add_option("--out", dif.out, "CSV path (default stdout)");

  cli::OodOptions ood;
  auto* o = app.add_subcommand("ood", "Score ID vs OOD streams and report AUROC / AUPR-Out / FPR95");
  o->add_option("--id", ood.id, "ID test .msnn file")->required();
  o->add_option("--ood", ood.ood, "OOD .msnn file")->required();
  o->add_option("--id-train", ood.id_train, "ID data for prototypes / kNN bank (default --id)");
  o->add_option("--checkpoint", ood.checkpoint)->required();
  o->add_option("--method", ood.method, "dgp, msp, energy, knn or scp")->capture_default_str();
  o->add_option("--scores", ood.scores_out, "Per-sample score CSV");
  o->add_option("--metrics", ood.metrics_out, "Metrics JSON");
  o->add_flag("--pruned-signature", ood.pruned_signature, "Use Top-k pruned matrices in DGP signatures");

  cli::PerturbEvalOptions pe;
  auto* p = app.add_subcommand("perturb-eval", "Accuracy under test-time perturbation");
  p->add_option("--checkpoint", pe.checkpoint)->required();
  p->add_option("--compare", pe.compare, "Second checkpoint, reported as accuracy_compare");
  p->add_option("--data", pe.data)->required();
  p->add_option("--kind", pe.kind, "salt-pepper, poisson or frame-loss")->capture_default_str();
  p->add_option("--rho-range", pe.rho_range)->capture_default_str();
  p->add_option("--seed", pe.seed)->capture_default_str();
  p->add_option("--out", pe.out, "CSV path (default stdout)");

  cli::EnergyOptions en;
  auto* e = app.add_subcommand("energy-report", "Synaptic-operation counts and energy");
  e->add_option("--checkpoint", en.checkpoint)->required();
  e->add_option("--data", en.data)->required();
  e->add_option("--out", en.out, "JSON path (default stdout)");
  e->add_option("--rates", en.rates_out, "Firing-rate CSV path");

  CLI11_PARSE(app, argc, argv);

  if (g->parsed()) return cli::cmd_generate(gen, std::cout, std::cerr);
  if (t->parsed()) {
    if (seed_opt->count() > 0) tr.seed = train_seed;
    return cli::cmd_train(tr, std::cout, std::cerr);
  }
  if (d->parsed()) return cli::cmd_diffusion_analyze(dif, std::cout, std::cerr);
  if (o->parsed()) return cli::cmd_ood(ood, std::cout, std::cerr);
  if (p->parsed()) return cli::cmd_perturb_eval(pe, std::cout, std::cerr);
  if (e->parsed()) return cli::cmd_energy_report(en, std::cout, std::cerr);
  return 1;
}
