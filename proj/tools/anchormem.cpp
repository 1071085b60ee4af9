// anchormem: command-line front end for the agent memory engine.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "anchormem/agent_service.hpp"
#include "anchormem/config.hpp"
#include "anchormem/error.hpp"
#include "anchormem/http_api.hpp"
#include "anchormem/resilience_lab.hpp"

namespace {

using namespace anchormem;

anchormem::ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::string join_ids(const std::vector<std::int64_t>& ids) {
  std::ostringstream out;
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : "") << ids[i];
  return out.str();
}

void print_turn(const ChatResult& r, std::ostream& out) {
  out << r.answer.response << '\n';
  out << "  [mode=" << to_string(r.mode);
  if (r.answer.decision) {
    out << " route=" << to_string(r.answer.decision->route) << std::fixed << std::setprecision(3)
        << " p=" << r.answer.decision->p_exhaustive
        << " router_ms=" << r.answer.decision->router_latency.count() * 1000.0;
    if (r.answer.decision->fallback) out << " fallback";
  }
  out << " entries=" << join_ids(r.answer.context.provenance);
  if (r.answer.context.truncated) out << " truncated";
  if (r.answer.context.degraded) out << " degraded";
  out << "]\n";
}

AnchorKind require_kind(const std::string& name) {
  auto kind = parse_anchor_kind(name);
  if (!kind) throw Error(ErrorCode::kInvalidArgument, "unknown anchor '" + name + "'");
  return *kind;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      ks.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "bad k list '" + text + "'");
    }
  }
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchormem: persistent agent memory with routed retrieval and drift monitoring"};
  app.require_subcommand(1);

  std::string config_path;
  std::string root;
  std::string backend_kind;
  std::string mode_text;
  app.add_option("-c,--config", config_path, "Config file (key = value format)");
  app.add_option("--root", root, "Directory holding agent directories");
  app.add_option("--backend", backend_kind, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  app.add_option("--mode", mode_text, "inject, rag or hybrid");

  std::string agent_id;
  std::string session_id = "cli";
  std::string message;
  std::string soul_file;
  std::string kind_name;
  std::string new_agent_id;
  std::size_t threshold = 0;
  bool json_out = false;

  auto* init = app.add_subcommand("init", "Create an agent");
  init->add_option("agent", agent_id)->required();
  init->add_option("--soul", soul_file, "File with the initial SOUL.md text");

  auto* fork = app.add_subcommand("fork", "Copy an agent under a new id");
  fork->add_option("agent", agent_id)->required();
  fork->add_option("new_agent", new_agent_id)->required();

  auto* list = app.add_subcommand("list", "List agents");

  auto* chat = app.add_subcommand("chat", "Interactive session (one line per turn, /quit to leave)");
  chat->add_option("agent", agent_id)->required();
  chat->add_option("--session", session_id);

  auto* ask = app.add_subcommand("ask", "Single turn");
  ask->add_option("agent", agent_id)->required();
  ask->add_option("message", message)->required();
  ask->add_option("--session", session_id);

  auto* baseline = app.add_subcommand("baseline", "Capture the identity baseline");
  baseline->add_option("agent", agent_id)->required();

  auto* drift = app.add_subcommand("drift", "Compare current behavior against the baseline");
  drift->add_option("agent", agent_id)->required();
  drift->add_option("--threshold", threshold, "Hamming threshold (default from config)");
  drift->add_flag("--json", json_out);

  auto* fail = app.add_subcommand("fail", "Disable an anchor");
  fail->add_option("agent", agent_id)->required();
  fail->add_option("kind", kind_name)->required();

  auto* heal = app.add_subcommand("heal", "Re-enable an anchor");
  heal->add_option("agent", agent_id)->required();
  heal->add_option("kind", kind_name)->required();

  SimulationOptions sim;
  std::string out_path;
  auto* simulate = app.add_subcommand("simulate", "Routing workload and anchor-failure scenarios");
  simulate->add_option("--queries", sim.workload.count);
  simulate->add_option("--alpha", sim.workload.alpha);
  simulate->add_option("--seed", sim.workload.seed);
  simulate->add_option("--scenarios", sim.scenarios);
  simulate->add_option("--max-delta", sim.max_delta);
  simulate->add_option("--out", out_path, "JSON-lines output file");

  std::string ks_text = "2,4,8,16,32";
  std::size_t reps = 5;
  auto* bench = app.add_subcommand("bench", "Consistency-check cost against anchor count");
  bench->add_option("--k", ks_text, "Comma-separated anchor counts");
  bench->add_option("--reps", reps);
  bench->add_option("--out", out_path, "JSON-lines output file");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  CLI11_PARSE(app, argc, argv);

  try {
    EngineConfig config = config_path.empty() ? EngineConfig{} : load_config(config_path);
    if (!root.empty()) config.root_directory = root;
    if (backend_kind == "mock") config.backend.kind = BackendKind::kMock;
    if (backend_kind == "http") config.backend.kind = BackendKind::kHttp;
    if (!mode_text.empty()) {
      auto mode = parse_engine_mode(mode_text);
      if (!mode) throw Error(ErrorCode::kConfig, "mode must be inject, rag or hybrid");
      config.mode = *mode;
    }
    config.validate();

    if (*simulate) {
      auto backend = make_backend(config.backend);
      std::ofstream file;
      if (!out_path.empty()) file.open(out_path);
      run_simulation(sim, *backend, out_path.empty() ? nullptr : &file, &std::cout);
      return 0;
    }
    if (*bench) {
      ScalingReport report = consistency_scaling(parse_ks(ks_text), reps);
      std::ofstream file;
      if (!out_path.empty()) file.open(out_path);
      write_scaling_report(report, out_path.empty() ? nullptr : &file, &std::cout);
      return 0;
    }

    AgentService service(config);

    if (*init) {
      const std::string soul = soul_file.empty() ? std::string() : read_file(soul_file);
      service.create_agent(agent_id, soul);
      std::cout << "created " << (config.root_directory / agent_id).string() << '\n';
    } else if (*fork) {
      service.fork_agent(agent_id, new_agent_id);
      std::cout << "forked " << agent_id << " -> " << new_agent_id << '\n';
    } else if (*list) {
      for (const auto& id : service.list_agents()) std::cout << id << '\n';
    } else if (*ask) {
      print_turn(service.chat(agent_id, session_id, message), std::cout);
    } else if (*chat) {
      std::string line;
      while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        if (line == "/quit" || line == "/exit") break;
        if (line.empty()) continue;
        try {
          print_turn(service.chat(agent_id, session_id, line), std::cout);
        } catch (const Error& e) {
          if (!is_backend_error(e.code())) throw;
          std::cerr << "backend error: " << e.what() << '\n';
        }
      }
    } else if (*baseline) {
      const Baseline b = service.capture_baseline(agent_id);
      std::cout << b.hash.hex() << " (" << b.hash.probe_set_version << ")\n";
    } else if (*drift) {
      const DriftReport r = service.drift(agent_id, threshold ? std::optional(threshold) : std::nullopt);
      if (json_out) {
        std::cout << "{\"hamming_distance\":" << r.hamming_distance << ",\"threshold\":" << r.threshold
                  << ",\"drifted\":" << (r.drifted ? "true" : "false") << ",\"kl_estimate\":" << r.kl_estimate
                  << "}\n";
      } else {
        std::cout << "hamming " << r.hamming_distance << " / threshold " << r.threshold << " -> "
                  << (r.drifted ? "DRIFTED" : "stable") << "  (KL " << r.kl_estimate << ")\n";
      }
    } else if (*fail || *heal) {
      const bool enable = static_cast<bool>(*heal);
      service.set_anchor_enabled(agent_id, require_kind(kind_name), enable);
      std::cout << kind_name << (enable ? " enabled" : " disabled") << '\n';
    } else if (*serve) {
      ApiServer server(service);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ':' << port << "/v1" << std::endl;
      if (!server.listen(host, port)) {
        std::cerr << "cannot listen on " << host << ':' << port << '\n';
        return 1;
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
