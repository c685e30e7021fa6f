#include "cli.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jenkins/dataset.hpp"
#include "jenkins/decoder.hpp"
#include "jenkins/encoder.hpp"
#include "jenkins/kinematics.hpp"
#include "jenkins/loop.hpp"
#include "jenkins/service.hpp"

namespace jenkins::cli {

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Options {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  int trials = 2000;
  int epochs = 0;
  std::string decoder;
  std::string encoder;
  std::string chain;
  std::string leader;
  int port = 8080;
  double temperature = 1.0;
  double lambda = 0.0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return cells;
}

void print_config(std::ostream& out, const std::string& command, const nlohmann::json& config) {
  out << "config " << command << ' ' << config.dump() << '\n';
}

kinematics::KinematicChain resolve_chain(const Options& o) {
  auto chain = o.chain.empty() ? kinematics::KinematicChain::koch_follower() : kinematics::KinematicChain::load(o.chain);
  if (o.lambda != 0.0) chain.decay = o.lambda;
  chain.validate();
  return chain;
}

nlohmann::json chain_json(const kinematics::KinematicChain& chain, const Options& o) {
  return {{"chain", o.chain.empty() ? "builtin:koch_follower" : o.chain},
          {"lambda", chain.decay},
          {"anchor", {chain.anchor.x(), chain.anchor.y()}},
          {"working_height", chain.working_height}};
}

void write_loss_log(const std::string& path, const std::vector<double>& train, const std::vector<double>& val) {
  std::ofstream log(path);
  if (!log) throw Error("cannot write '" + path + "'");
  log << "epoch,train_loss,validation_loss\n";
  log << std::setprecision(10);
  for (std::size_t e = 0; e < train.size(); ++e) log << e << ',' << train[e] << ',' << val[e] << '\n';
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  data::GenerateOptions g;
  g.trials = o.trials;
  g.seed = o.seed;
  print_config(out, "gen-data", {{"trials", g.trials}, {"seed", g.seed}, {"out", o.out}});
  const auto dataset = data::generate_dataset(g);
  data::save_dataset(dataset, o.out);
  out << "wrote " << dataset.trials.size() << " trials (" << dataset.total_bins() << " bins) to " << o.out << '\n';
  return 0;
}

int cmd_train_decoder(const Options& o, std::ostream& out) {
  decoder::DecoderConfig cfg;
  cfg.seed = o.seed;
  if (o.epochs > 0) cfg.epochs = o.epochs;
  auto j = cfg.to_json();
  j["data"] = o.data;
  j["out"] = o.out;
  print_config(out, "train-decoder", j);
  const auto dataset = data::load_dataset(o.data);
  const auto result = decoder::train_decoder(dataset, cfg, [&](int epoch, double tr, double va) {
    out << "epoch " << epoch << " train_loss " << tr << " validation_loss " << va << '\n' << std::flush;
  });
  result.model.save(o.out);
  write_loss_log(o.out + ".loss.csv", result.history.train_loss, result.history.validation_loss);
  const auto eval = decoder::evaluate_decoder(result.model, dataset, data::Split::test);
  out << "best_epoch " << result.history.best_epoch << '\n';
  out << "test_r2 vx " << eval.r2.component[0] << " vy " << eval.r2.component[1] << " mean " << eval.r2.mean << '\n';
  return 0;
}

int cmd_train_encoder(const Options& o, std::ostream& out) {
  encoder::EncoderConfig cfg;
  cfg.seed = o.seed;
  if (o.epochs > 0) cfg.epochs = o.epochs;
  auto j = cfg.to_json();
  j["data"] = o.data;
  j["out"] = o.out;
  print_config(out, "train-encoder", j);
  const auto dataset = data::load_dataset(o.data);
  const auto result = encoder::train_encoder(dataset, cfg, [&](int epoch, double tr, double va) {
    out << "epoch " << epoch << " train_loss " << tr << " validation_loss " << va << '\n' << std::flush;
  });
  result.model.save(o.out);
  write_loss_log(o.out + ".loss.csv", result.history.train_loss, result.history.validation_loss);
  out << "best_epoch " << result.history.best_epoch << '\n';
  out << "uniform_baseline " << encoder::uniform_baseline_loss() << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.decoder.empty() && o.encoder.empty()) throw Error("eval needs --decoder and/or --encoder");
  print_config(out, "eval", {{"data", o.data}, {"decoder", o.decoder}, {"encoder", o.encoder}, {"split", "test"}});
  const auto dataset = data::load_dataset(o.data);
  if (!o.decoder.empty()) {
    const auto model = decoder::DecoderModel::load(o.decoder);
    const auto e = decoder::evaluate_decoder(model, dataset, data::Split::test);
    out << "decoder r2_vx " << e.r2.component[0] << '\n';
    out << "decoder r2_vy " << e.r2.component[1] << '\n';
    out << "decoder r2_mean " << e.r2.mean << '\n';
  }
  if (!o.encoder.empty()) {
    const auto model = encoder::EncoderModel::load(o.encoder);
    const double loss = encoder::evaluate_encoder(model, dataset, data::Split::test);
    out << "encoder cross_entropy " << loss << '\n';
    out << "encoder uniform_baseline " << encoder::uniform_baseline_loss() << '\n';
    out << "encoder ratio " << loss / encoder::uniform_baseline_loss() << '\n';
  }
  return 0;
}

loop::LoopConfig build_loop(const Options& o, const kinematics::KinematicChain& chain) {
  loop::LoopConfig cfg;
  cfg.decoder = std::make_shared<const decoder::DecoderModel>(decoder::DecoderModel::load(o.decoder));
  cfg.encoder = std::make_shared<const encoder::EncoderModel>(encoder::EncoderModel::load(o.encoder));
  cfg.chain = std::make_shared<const kinematics::KinematicChain>(chain);
  cfg.arm = loop::ArmSettings::from_chain(chain);
  cfg.temperature = o.temperature;
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const auto chain = resolve_chain(o);
  auto j = chain_json(chain, o);
  j.update({{"decoder", o.decoder},
            {"encoder", o.encoder},
            {"leader", o.leader},
            {"seed", o.seed},
            {"temperature", o.temperature},
            {"out", o.out}});
  print_config(out, "simulate", j);
  const auto cfg = build_loop(o, chain);
  const VelocityMatrix leader = read_leader_csv(o.leader);
  const auto result = loop::run_full_loop(cfg, leader);
  const auto metrics = loop::evaluate_loop(leader, result, cfg.arm, cfg.encoder->training_mean_count);

  data::Dataset ds;
  data::BinnedTrial trial;
  trial.split = data::Split::test;
  trial.counts = result.spikes;
  trial.velocities = result.decoded;
  ds.trials.push_back(std::move(trial));
  std::ofstream file(o.out);
  if (!file) throw Error("cannot write '" + o.out + "'");
  data::write_dataset(ds, file);
  std::ostringstream block;
  block << std::setprecision(10);
  block << "# metrics\n";
  block << "# bins = " << leader.rows() << '\n';
  block << "# correlation_vx = " << metrics.correlation[0].value << '\n';
  block << "# correlation_vy = " << metrics.correlation[1].value << '\n';
  block << "# degenerate_vx = " << (metrics.correlation[0].degenerate ? 1 : 0) << '\n';
  block << "# degenerate_vy = " << (metrics.correlation[1].degenerate ? 1 : 0) << '\n';
  block << "# rmse_mm = " << metrics.rmse_mm << '\n';
  block << "# rate_in_band = " << metrics.in_band_fraction << '\n';
  block << "# stable = " << (metrics.stable ? 1 : 0) << '\n';
  file << block.str();

  std::ofstream arm(o.out + ".arm.csv");
  if (!arm) throw Error("cannot write '" + o.out + ".arm.csv'");
  arm << std::setprecision(10);
  arm << "bin,leader_vx,leader_vy,decoded_vx,decoded_vy,x,y,follower_x,follower_y,q0,q1,q2,q3,q4,q5\n";
  for (Eigen::Index t = 0; t < leader.rows(); ++t) {
    arm << t << ',' << leader(t, 0) << ',' << leader(t, 1) << ',' << result.decoded(t, 0) << ','
        << result.decoded(t, 1) << ',' << result.positions(t, 0) << ',' << result.positions(t, 1) << ','
        << result.follower(t, 0) << ',' << result.follower(t, 1);
    for (double q : result.angles[std::size_t(t)]) arm << ',' << q;
    arm << '\n';
  }
  out << block.str();
  return 0;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const auto chain = resolve_chain(o);
  auto j = chain_json(chain, o);
  j.update({{"decoder", o.decoder},
            {"encoder", o.encoder},
            {"seed", o.seed},
            {"temperature", o.temperature},
            {"port", o.port}});
  print_config(out, "serve", j);
  if (o.port < 0 || o.port > 65535) throw Error("--port must be in [0, 65535]");
  const auto cfg = build_loop(o, chain);
  const nlohmann::json info = {{"decoder", cfg.decoder->manifest()}, {"encoder", cfg.encoder->manifest()}};
  service::ServiceOptions opts;
  opts.port = std::uint16_t(o.port);
  opts.threads = int(std::max(1u, std::thread::hardware_concurrency()));
  service::Service svc(cfg, info, opts);
  const auto port = svc.start();
  out << "listening on 127.0.0.1:" << port << '\n' << std::flush;
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.stop();
  out << "stopped\n";
  return 0;
}

}  // namespace

VelocityMatrix read_leader_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open leader file '" + path.string() + "'");
  const std::string source = path.string();
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv(line);
    if (header.empty()) {
      header = cells;
      const bool ok = header == std::vector<std::string>{"x", "y"} || header == std::vector<std::string>{"x", "y", "z"} ||
                      header == std::vector<std::string>{"vx", "vy"};
      if (!ok) throw ParseError(source, line_no, "header must be 'x,y', 'x,y,z' or 'vx,vy'");
      continue;
    }
    if (cells.size() != header.size()) {
      throw ParseError(source, line_no, "expected " + std::to_string(header.size()) + " columns");
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(v)) {
        throw ParseError(source, line_no, "not a finite number: '" + c + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (header.empty()) throw ParseError(source, line_no, "missing header");
  VelocityMatrix v;
  if (header[0] == "vx") {
    if (rows.empty()) throw ParseError(source, line_no, "no samples");
    v.resize(Eigen::Index(rows.size()), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) v.row(Eigen::Index(i)) << rows[i][0], rows[i][1];
  } else {
    std::vector<Vec2> positions;
    for (const auto& r : rows) positions.emplace_back(r[0], r[1]);
    const auto vel = data::differentiate_positions(positions);
    v.resize(Eigen::Index(vel.size()), 2);
    for (std::size_t i = 0; i < vel.size(); ++i) v.row(Eigen::Index(i)) = vel[i].transpose();
  }
  return v;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Closed-loop spike encode/decode toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic center-out dataset");
  gen->add_option("--trials", o.trials, "Number of trials")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  gen->add_option("--out", o.out, "Output dataset file")->required();

  auto* tdec = app.add_subcommand("train-decoder", "Train the spike-to-velocity MLP");
  tdec->add_option("--data", o.data, "Dataset file")->required()->check(CLI::ExistingFile);
  tdec->add_option("--out", o.out, "Output model file")->required();
  tdec->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  tdec->add_option("--epochs", o.epochs, "Epochs (default 30)")->check(CLI::PositiveNumber);

  auto* tenc = app.add_subcommand("train-encoder", "Train the velocity-to-spike transformer");
  tenc->add_option("--data", o.data, "Dataset file")->required()->check(CLI::ExistingFile);
  tenc->add_option("--out", o.out, "Output model file")->required();
  tenc->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  tenc->add_option("--epochs", o.epochs, "Epochs (default 60)")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Score models on the test split");
  ev->add_option("--data", o.data, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--decoder", o.decoder, "Decoder model")->check(CLI::ExistingFile);
  ev->add_option("--encoder", o.encoder, "Encoder model")->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("simulate", "Run the full loop on a leader trace");
  sim->add_option("--leader", o.leader, "Leader CSV")->required()->check(CLI::ExistingFile);
  sim->add_option("--decoder", o.decoder, "Decoder model")->required()->check(CLI::ExistingFile);
  sim->add_option("--encoder", o.encoder, "Encoder model")->required()->check(CLI::ExistingFile);
  sim->add_option("--chain", o.chain, "Chain config file")->check(CLI::ExistingFile);
  sim->add_option("--out", o.out, "Output file")->required();
  sim->add_option("--seed", o.seed, "Sampling seed")->capture_default_str();
  sim->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  sim->add_option("--lambda", o.lambda, "Decay filter lambda (default from chain)");

  auto* srv = app.add_subcommand("serve", "Serve live sessions over HTTP/WebSocket");
  srv->add_option("--decoder", o.decoder, "Decoder model")->required()->check(CLI::ExistingFile);
  srv->add_option("--encoder", o.encoder, "Encoder model")->required()->check(CLI::ExistingFile);
  srv->add_option("--chain", o.chain, "Chain config file")->check(CLI::ExistingFile);
  srv->add_option("--port", o.port, "TCP port (0 picks a free one)")->capture_default_str();
  srv->add_option("--seed", o.seed, "Sampling seed")->capture_default_str();
  srv->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  srv->add_option("--lambda", o.lambda, "Decay filter lambda (default from chain)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (tdec->parsed()) return cmd_train_decoder(o, out);
    if (tenc->parsed()) return cmd_train_encoder(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    if (srv->parsed()) return cmd_serve(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace jenkins::cli
