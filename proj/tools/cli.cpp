#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "imarl/config.hpp"
#include "imarl/evalkit.hpp"
#include "imarl/qmix/learner.hpp"

namespace imarl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad input that is the caller's fault: exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || res.ec != std::errc{} || res.ptr != item.data() + item.size()) {
            throw UsageError("--seeds: '" + item + "' is not a non-negative integer");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) throw UsageError("--seeds: empty list");
    return seeds;
}

config::RunConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("config not found: " + path);
    return config::load_run_config(path);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string group;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::optional<int> episodes;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const auto cfg = load_config(a.config);
    env::AgentGroup group{};
    try {
        group = env::group_from_string(a.group);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--group: ") + e.what());
    }
    auto hp = cfg.hyperparams;
    if (a.episodes) {
        if (*a.episodes < 0) throw UsageError("--episodes must be non-negative");
        hp.episodes = *a.episodes;
    }
    if (hp.episodes == 0) err << "warning: zero episodes, writing the initial weights untrained\n";

    const fs::path ckpt_path = config::resolve_output(a.out);
    const fs::path dir = ckpt_path.parent_path();
    const std::string stem = ckpt_path.stem().string();
    const std::string log_name = stem + ".train_log.csv";
    const std::string manifest_name = stem + ".manifest.json";

    config::RunManifest manifest;
    manifest.command = "train";
    manifest.started_at = config::utc_now();
    manifest.config_hash = config::canonical_hash(config::to_json(cfg));
    manifest.seeds = {a.seed};

    std::ostringstream log;
    log << "episode,return,loss,epsilon\n";
    const int report_every = std::max(1, hp.episodes / 10);
    auto on_episode = [&](const qmix::TrainLogRow& row) {
        log << row.episode << ',' << num(row.episode_return) << ',' << num(row.loss) << ',' << num(row.epsilon)
            << '\n';
        if ((row.episode + 1) % report_every == 0) {
            err << "episode " << row.episode + 1 << "/" << hp.episodes << " return " << fixed(row.episode_return)
                << " loss " << fixed(row.loss, 6) << '\n';
        }
    };
    auto trained = qmix::train_group(cfg.scenario.env, group, hp, a.seed, on_episode);

    qmix::Checkpoint ckpt{group, a.seed, hp, config::env_to_json(cfg.scenario.env), trained.net.params()};
    const json ckpt_json = qmix::checkpoint_to_json(ckpt);
    const std::string ckpt_id = config::canonical_hash(ckpt_json);
    config::write_text(ckpt_path, ckpt_json.dump());
    config::write_text(dir / log_name, log.str());

    json hyper = hp.to_json();
    hyper["group"] = env::to_string(group);
    manifest.hyperparameters = std::move(hyper);
    manifest.checkpoint_ids = {ckpt_id};
    manifest.artifacts = {ckpt_path.filename().string(), log_name};
    manifest.finished_at = config::utc_now();
    config::write_text(dir / manifest_name, manifest.to_json().dump(2) + "\n");

    out << "checkpoint " << ckpt_path.string() << " (" << ckpt_id.substr(0, 12) << ", " << trained.updates
        << " updates)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string scenario;
    std::string setup;
    std::vector<std::string> checkpoints;
    std::string seeds;
    int jobs = 1;
    std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
    auto cfg = load_config(a.scenario);
    supervisor::Setup setup{};
    try {
        setup = supervisor::setup_from_string(a.setup);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--setup: ") + e.what());
    }
    if (!a.seeds.empty()) cfg.scenario.seeds = parse_seeds(a.seeds);
    if (a.jobs < 1) throw UsageError("--jobs must be positive");
    try {
        cfg.scenario.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    // Everything is checked before the first episode runs.
    std::optional<qmix::Checkpoint> prio_ckpt, mbr_ckpt;
    std::vector<std::string> ids;
    for (const auto& path : a.checkpoints) {
        if (!fs::is_regular_file(path)) throw UsageError("checkpoint not found: " + path);
        const std::string text = config::read_text(path);
        qmix::Checkpoint ckpt;
        try {
            ckpt = qmix::checkpoint_from_json(json::parse(text));
        } catch (const std::exception& e) {
            throw UsageError("invalid checkpoint " + path + ": " + e.what());
        }
        auto& slot = ckpt.group == env::AgentGroup::PRIORITY ? prio_ckpt : mbr_ckpt;
        if (slot) throw UsageError("two " + std::string(env::to_string(ckpt.group)) + " checkpoints supplied");
        if (ckpt.env.contains("emulator") &&
            ckpt.env.at("emulator") != config::env_to_json(cfg.scenario.env).at("emulator")) {
            err << "warning: " << path << " was trained under different emulator settings\n";
        }
        ids.push_back(config::canonical_hash(qmix::checkpoint_to_json(ckpt)));
        slot = std::move(ckpt);
    }
    const bool need_prio = setup != supervisor::Setup::ONLY_MBR;
    const bool need_mbr = setup != supervisor::Setup::ONLY_PRIORITY;
    if ((need_prio && !prio_ckpt) || (need_mbr && !mbr_ckpt)) {
        throw UsageError("setup " + std::string(supervisor::to_string(setup)) + " needs " +
                         (need_prio && need_mbr ? "a priority and an mbr checkpoint"
                          : need_prio           ? "a priority checkpoint"
                                                : "an mbr checkpoint"));
    }
    if ((!need_prio && prio_ckpt) || (!need_mbr && mbr_ckpt)) {
        err << "warning: a checkpoint not used by setup " << supervisor::to_string(setup) << " was ignored\n";
    }

    const std::string dir_name =
        a.out.empty() ? "runs/" + cfg.scenario.name + "-" + std::string(supervisor::to_string(setup)) : a.out;
    const fs::path dir = config::resolve_output(dir_name);

    config::RunManifest manifest;
    manifest.command = "evaluate";
    manifest.started_at = config::utc_now();
    const json resolved = config::to_json(cfg);
    const std::string config_hash = config::canonical_hash(resolved);
    manifest.config_hash = config_hash;
    manifest.seeds = cfg.scenario.seeds;
    manifest.checkpoint_ids = ids;

    std::optional<qmix::QmixNet> prio_net, mbr_net;
    if (need_prio) prio_net = prio_ckpt->network();
    if (need_mbr) mbr_net = mbr_ckpt->network();
    json hyper = json::object();
    if (need_prio) hyper["priority"] = prio_ckpt->hyperparams.to_json();
    if (need_mbr) hyper["mbr"] = mbr_ckpt->hyperparams.to_json();
    manifest.hyperparameters = std::move(hyper);

    supervisor::Policies policies{prio_net ? &*prio_net : nullptr, mbr_net ? &*mbr_net : nullptr};
    const auto result = evalkit::run_scenario(cfg.scenario, setup, policies, a.jobs);

    for (const auto& run : result.runs) {
        const std::string name = "trace_seed" + std::to_string(run.seed) + ".csv";
        config::write_text(dir / name, evalkit::trace_csv(run));
        manifest.artifacts.push_back(name);
    }
    json summary = evalkit::summary_json(result);
    summary["config_hash"] = config_hash;
    summary["checkpoint_ids"] = ids;
    summary["manifest"] = "manifest.json";
    summary["protocol"] = {{"capacity_mbps", resolved.at("emulator").at("capacity_mbps")},
                           {"capacity_scope", resolved.at("emulator").at("capacity_scope")},
                           {"penalties", resolved.at("penalties")},
                           {"intent_schedule", resolved.at("intent_schedule")},
                           {"evaluation", resolved.at("evaluation")}};
    config::write_text(dir / "summary.json", summary.dump(2) + "\n");
    manifest.artifacts.push_back("summary.json");
    manifest.finished_at = config::utc_now();
    config::write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");

    out << cfg.scenario.name << " / " << supervisor::to_string(setup) << " over " << result.runs.size()
        << " seeds\n";
    for (auto s : netemu::kAllServices) {
        const auto i = netemu::index_of(s);
        out << "  " << std::left << std::setw(6) << netemu::to_string(s) << " median M " << fixed(result.m[i].median)
            << "  IQR " << fixed(result.m[i].iqr()) << "  satisfied " << fixed(result.satisfaction[i].median, 3)
            << '\n';
    }
    out << "wrote " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

std::string render_report(const std::vector<evalkit::ScenarioResult>& results, const std::string& config_hash,
                          const json& protocol) {
    const auto cmp = evalkit::compare_setups(results);
    std::ostringstream doc;
    doc << "# Report: " << results.front().scenario << "\n\n";
    doc << "Config hash: `" << config_hash << "`\n\n";
    doc << "Seeds:";
    for (auto s : results.front().seeds()) doc << ' ' << s;
    doc << "\n\n";
    if (protocol.is_object()) {
        const auto& ev = protocol.at("evaluation");
        const auto& sup = ev.at("supervisor");
        const auto& pen = protocol.at("penalties");
        doc << "Protocol: " << ev.at("horizon").get<int>() << " control steps per seed, capacity "
            << protocol.at("capacity_mbps").get<double>() << " Mbps (" << protocol.at("capacity_scope").get<std::string>()
            << "), penalties cv " << pen.at("cv").get<double>() << " / urllc " << pen.at("urllc").get<double>()
            << " / miot " << pen.at("miot").get<double>() << ", supervisor every " << sup.at("cadence").get<int>()
            << " steps with tolerance " << sup.at("tolerance").get<double>() << " ("
            << sup.at("cap_rule").get<std::string>() << ")\n\n";
        doc << "Intent schedule:\n\n";
        for (const auto& phase : protocol.at("intent_schedule")) {
            doc << "- step " << phase.at("step").get<int>() << ":";
            for (const auto& in : phase.at("intents")) {
                doc << ' ' << in.at("id").get<std::string>() << " (" << in.at("service").get<std::string>() << ' '
                    << in.at("percent").get<int>() << "% target " << in.at("target").get<double>() << ")";
            }
            doc << '\n';
        }
        doc << '\n';
    }
    doc << "## Median M [q1, q3]\n\nLower is better. `*` marks the unique lowest median per service.\n\n";

    auto header = [&] {
        doc << "| service |";
        for (const auto& r : results) doc << ' ' << supervisor::to_string(r.setup) << " |";
        doc << "\n|---|";
        for (std::size_t k = 0; k < results.size(); ++k) doc << "---|";
        doc << '\n';
    };
    header();
    for (auto s : netemu::kAllServices) {
        const auto i = netemu::index_of(s);
        doc << "| " << netemu::to_string(s) << " |";
        for (std::size_t k = 0; k < results.size(); ++k) {
            const auto& m = results[k].m[i];
            doc << ' ' << fixed(m.median) << " [" << fixed(m.q1) << ", " << fixed(m.q3) << "]"
                << (cmp.cells[k][i].winner ? " *" : "") << " |";
        }
        doc << '\n';
    }

    doc << "\n## Intent satisfaction (median share of steps)\n\n";
    header();
    for (auto s : netemu::kAllServices) {
        const auto i = netemu::index_of(s);
        doc << "| " << netemu::to_string(s) << " |";
        for (const auto& r : results) doc << ' ' << fixed(r.satisfaction[i].median, 3) << " |";
        doc << '\n';
    }

    doc << "\n## Checks\n\n";
    if (results.size() > 1) {
        for (auto s : netemu::kAllServices) {
            const auto i = netemu::index_of(s);
            std::string best = "tie";
            for (std::size_t k = 0; k < results.size(); ++k) {
                if (cmp.cells[k][i].winner) best = std::string(supervisor::to_string(results[k].setup));
            }
            doc << "- lowest median M for " << netemu::to_string(s) << ": " << best << '\n';
        }
        for (std::size_t k = 0; k < results.size(); ++k) {
            int wins = 0;
            for (const auto& cell : cmp.cells[k]) wins += cell.winner;
            doc << "- " << supervisor::to_string(results[k].setup) << " is lowest for " << wins << " of 3 services\n";
        }
    } else {
        doc << "- single setup, no comparison\n";
    }
    for (const auto& r : results) {
        int high = 0, low = 0;
        for (const auto& sat : r.satisfaction) {
            high += sat.median >= 0.8;
            low += sat.median < 0.5;
        }
        doc << "- " << supervisor::to_string(r.setup) << ": " << high << " of 3 intents satisfied in at least 80% of steps, "
            << low << " of 3 below 50%\n";
    }
    return doc.str();
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
    std::vector<evalkit::ScenarioResult> results;
    std::optional<std::string> hash;
    json protocol;
    for (const auto& dir : a.runs) {
        if (!fs::is_directory(dir)) throw UsageError("run directory not found: " + dir);
        const fs::path path = fs::path(dir) / "summary.json";
        if (!fs::is_regular_file(path)) throw UsageError("no summary.json in " + dir);
        json summary;
        try {
            summary = json::parse(config::read_text(path));
        } catch (const json::parse_error& e) {
            throw UsageError(path.string() + ": " + e.what());
        }
        auto result = evalkit::result_from_summary(summary);
        const std::string h = summary.value("config_hash", "");
        if (!results.empty()) {
            if (result.scenario != results.front().scenario || h != *hash) {
                throw UsageError("incompatible scenarios: " + dir + " was produced from a different scenario than " +
                                 a.runs.front());
            }
            if (result.seeds() != results.front().seeds()) {
                throw UsageError("incompatible seeds: " + dir + " and " + a.runs.front() + " use different seed lists");
            }
            for (const auto& r : results) {
                if (r.setup == result.setup) {
                    throw UsageError("setup " + std::string(supervisor::to_string(r.setup)) + " appears twice");
                }
            }
        } else {
            hash = h;
            protocol = summary.value("protocol", json());
        }
        results.push_back(std::move(result));
    }
    const std::string doc = render_report(results, *hash, protocol);
    if (!a.out.empty()) config::write_text(config::resolve_output(a.out), doc);
    out << doc;
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Intent-driven multi-agent control of a network emulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(config::kToolVersion));

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train one agent group and write a checkpoint");
    train_cmd->add_option("--group", train.group, "priority or mbr")->required();
    train_cmd->add_option("--config", train.config, "Scenario/config JSON")->required();
    train_cmd->add_option("--seed", train.seed, "Training seed")->required();
    train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
    train_cmd->add_option("--episodes", train.episodes, "Override the configured episode count");

    EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Run a scenario over several seeds");
    eval_cmd->add_option("--scenario", eval.scenario, "Scenario JSON")->required();
    eval_cmd->add_option("--setup", eval.setup, "only-priority, only-mbr or supervised")->required();
    eval_cmd->add_option("--checkpoints", eval.checkpoints, "Checkpoint files")->required();
    eval_cmd->add_option("--seeds", eval.seeds, "Comma-separated seeds (default: from the scenario)");
    eval_cmd->add_option("--jobs", eval.jobs, "Worker threads");
    eval_cmd->add_option("--out", eval.out, "Output directory (default runs/<scenario>-<setup>)");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Compare evaluation runs of one scenario");
    report_cmd->add_option("--runs", report.runs, "Run directories")->required();
    report_cmd->add_option("--out", report.out, "Also write the report to this file");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << config::kToolVersion << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train, out, err);
        if (eval_cmd->parsed()) return cmd_evaluate(eval, out, err);
        return cmd_report(report, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace imarl::cli
