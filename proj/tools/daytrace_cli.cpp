// daytrace command line: trace generation, replay, study simulation, the
// study service, and device-state inspection.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "daytrace/service.hpp"
#include "daytrace/sim.hpp"

using namespace daytrace;

namespace {

constexpr const char* kCountersFile = "counters";

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::storage_error, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw Error(ErrorCode::storage_error, "cannot write " + p.string());
}

std::vector<double> parse_probabilities(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_config, "bad probability '" + item + "'");
    }
  }
  return out;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"daytrace: context telemetry pipeline, study service and simulator"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Synthetic traces and simulations");
  simulate->require_subcommand(1);

  // simulate trace
  SimConfig trace_cfg;
  std::string trace_out;
  auto* trace_cmd = simulate->add_subcommand("trace", "Generate a synthetic multi-day trace");
  trace_cmd->add_option("--seed", trace_cfg.seed, "RNG seed")->default_val(42);
  trace_cmd->add_option("--days", trace_cfg.days, "Days to generate")->default_val(7);
  trace_cmd->add_option("--out", trace_out, "Trace file")->required();

  // simulate replay
  std::string replay_trace, replay_config, replay_report, replay_state, replay_url;
  double replay_accel = 0;
  auto* replay_cmd = simulate->add_subcommand("replay", "Drive the pipeline through a trace");
  replay_cmd->add_option("--trace", replay_trace, "Trace file")->required();
  replay_cmd->add_option("--config", replay_config, "Acquisition config file")->required();
  replay_cmd->add_option("--report", replay_report, "Machine-readable report (JSON)")->required();
  replay_cmd->add_option("--state-dir", replay_state, "Persist the device log here instead of in memory");
  replay_cmd->add_option("--service-url", replay_url, "Upload events to this study service");
  replay_cmd->add_option("--acceleration", replay_accel, "Virtual seconds per wall second (0 = unpaced)");

  // simulate study
  StudyConfig study_cfg;
  std::string study_url, study_report, study_probs;
  bool study_no_telemetry = false;
  auto* study_cmd = simulate->add_subcommand("study", "Run a multi-user study end to end");
  study_cmd->add_option("--users", study_cfg.users)->default_val(50);
  study_cmd->add_option("--days", study_cfg.days)->default_val(28);
  study_cmd->add_option("--threshold", study_cfg.threshold)->default_val(0.8);
  study_cmd->add_option("--seed", study_cfg.seed)->default_val(42);
  study_cmd->add_option("--service-url", study_url, "Study service base URL (default: in-process service)");
  study_cmd->add_option("--report", study_report, "Machine-readable report (JSON)");
  study_cmd->add_option("--probabilities", study_probs, "Comma-separated daily completion probabilities");
  study_cmd->add_option("--admin-key", study_cfg.admin_key, "Admin key of the service");
  study_cmd->add_option("--raffle-winners", study_cfg.raffle_winners)->default_val(5);
  study_cmd->add_flag("--no-telemetry", study_no_telemetry, "Skip trace generation and event upload");

  // status
  std::string status_dir;
  auto* status_cmd = app.add_subcommand("status", "Print device diagnostics counters");
  status_cmd->add_option("--state-dir", status_dir)->required();

  // purge
  std::string purge_dir, purge_url;
  auto* purge_cmd = app.add_subcommand("purge", "Delete every locally stored event");
  purge_cmd->add_option("--state-dir", purge_dir)->required();
  purge_cmd->add_option("--service-url", purge_url, "Also delete this device's events on the service");

  // serve
  std::string serve_host = "127.0.0.1", serve_dir, serve_admin;
  int serve_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the study service");
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--port", serve_port);
  serve_cmd->add_option("--data-dir", serve_dir, "Persistent data directory")->required();
  serve_cmd->add_option("--admin-key", serve_admin, "Enables raffle and publish endpoints");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*trace_cmd) {
      Trace t = generate_trace(trace_cfg);
      save_trace(t, trace_out);
      std::cout << t.events.size() << " events over " << trace_cfg.days << " days written to " << trace_out << "\n";
    } else if (*replay_cmd) {
      const Trace t = load_trace(replay_trace);
      ReplayOptions opts;
      opts.acquisition = load_acquisition_config(replay_config);
      opts.acceleration = replay_accel;
      std::unique_ptr<HttpClientTransport> transport;
      if (!replay_url.empty()) {
        transport = std::make_unique<HttpClientTransport>(replay_url);
        opts.transport = transport.get();
      }
      EventLog log;
      std::optional<SimDevice> device;
      if (!replay_state.empty()) {
        std::filesystem::create_directories(replay_state);
        log = EventLog::open(replay_state, LogOptions{false, std::nullopt});
        SystemRandom rng;
        Salt salt = Salt::load_or_create(std::filesystem::path(replay_state) / "salt", rng);
        std::string id = load_or_create_installation_id(std::filesystem::path(replay_state) / "installation_id", rng);
        PseudonymId pid = pseudonymize(id, salt);
        device = SimDevice{Anonymizer(std::move(salt)), std::move(pid)};
      }
      ReplayReport r = device ? replay(t, log, *device, opts) : replay(t, log, opts);
      write_file(replay_report, r.json());
      if (!replay_state.empty()) {
        auto path = std::filesystem::path(replay_state) / kCountersFile;
        Diagnostics total;
        if (std::filesystem::exists(path)) total = Diagnostics::parse(read_file(path));
        total.merge(r.diagnostics);
        write_file(path, total.format());
      }
      std::cout << r.text();
    } else if (*study_cmd) {
      if (!study_probs.empty()) study_cfg.completion_probabilities = parse_probabilities(study_probs);
      study_cfg.telemetry = !study_no_telemetry;
      StudyReport r;
      if (study_url.empty()) {
        SeededRandom rng(study_cfg.seed);
        ServiceOptions so;
        so.admin_key = study_cfg.admin_key;
        so.rng = &rng;
        so.clock = [] { return TimestampMs{0}; };
        StudyService service(so);
        InProcessTransport transport(service.handler());
        r = run_study(study_cfg, transport);
      } else {
        HttpClientTransport transport(study_url, 30000);
        r = run_study(study_cfg, transport);
      }
      if (!study_report.empty()) write_file(study_report, r.json());
      std::cout << r.text();
    } else if (*status_cmd) {
      const std::filesystem::path dir(status_dir);
      if (!std::filesystem::exists(dir / "events.log"))
        throw Error(ErrorCode::storage_error, "no event log under " + status_dir);
      EventLog log = EventLog::open(dir);
      std::cout << "events " << log.size() << "\n";
      std::cout << "acked_through " << log.sync_cursor() << "\n";
      std::cout << "stored_bytes " << log.stored_bytes() << "\n";
      if (log.recovery().bytes_discarded) std::cout << "recovered_bytes_discarded " << log.recovery().bytes_discarded << "\n";
      if (std::filesystem::exists(dir / kCountersFile)) std::cout << read_file(dir / kCountersFile);
    } else if (*purge_cmd) {
      const std::filesystem::path dir(purge_dir);
      const auto salt_path = dir / "salt";
      const auto id_path = dir / "installation_id";
      if (!purge_url.empty()) {
        if (!std::filesystem::exists(salt_path) || !std::filesystem::exists(id_path))
          throw Error(ErrorCode::storage_error, "no device identity under " + purge_dir);
        SystemRandom rng;
        const PseudonymId pid =
            pseudonymize(load_or_create_installation_id(id_path, rng), Salt::load_or_create(salt_path, rng));
        HttpClientTransport transport(purge_url);
        HttpRequest req;
        req.method = "DELETE";
        req.path = "/v1/devices/" + pid.str() + "/events";
        HttpResponse resp = transport.send(req);
        if (resp.status != 200)
          throw Error(ErrorCode::service_unreachable, "delete request failed: status " + std::to_string(resp.status));
        std::cout << "service removed " << resp.body << "\n";
      } else if (std::filesystem::exists(id_path)) {
        // Seqs restart at 1; a fresh identity keeps them from colliding with
        // copies the service still holds.
        std::filesystem::remove(id_path);
        std::cout << "installation id rotated; events already uploaded remain on the service\n";
      }
      EventLog log = EventLog::open(dir);
      const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
      std::cout << "purged " << log.purge_all(now) << " events\n";
    } else if (*serve_cmd) {
      ServiceOptions so;
      so.data_dir = serve_dir;
      so.admin_key = serve_admin;
      StudyService service(so);
      HttpServer server(service.handler());
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving on " << serve_host << ":" << serve_port << std::endl;
      if (!server.listen(serve_host, serve_port)) {
        std::cerr << "cannot listen on " << serve_host << ":" << serve_port << "\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
