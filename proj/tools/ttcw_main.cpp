// ttcw: command-line entry point.
//
// Exit codes: 0 success, 1 validation or data failure, 2 transport failure,
// 64 usage error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ttcw/assessor.h"
#include "ttcw/corpus.h"
#include "ttcw/generation.h"
#include "ttcw/llm_client.h"
#include "ttcw/protocol.h"
#include "ttcw/registry.h"
#include "ttcw/report.h"
#include "ttcw/stats.h"

namespace fs = std::filesystem;
using namespace ttcw;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitTransport = 2;
constexpr int kExitUsage = 64;

std::string default_base_url(Provider p) {
    switch (p) {
        case Provider::OpenAi: return "https://api.openai.com/v1";
        case Provider::Anthropic: return "https://api.anthropic.com/v1";
        case Provider::Mock: return {};
    }
    return {};
}

// Client flags shared by generate and assess. Unset flags leave the
// env/config-file value in place.
struct ClientFlags {
    std::optional<std::string> provider;
    std::optional<std::string> model;
    std::optional<std::string> api_base;
    std::optional<int> rpm;
    std::optional<int> retry_cap;
    std::optional<double> temperature;
    std::optional<int> max_tokens;

    void add_to(CLI::App& app) {
        app.add_option("--provider", provider, "openai, anthropic or mock");
        app.add_option("--model", model, "Model name sent to the provider");
        app.add_option("--api-base", api_base, "Provider base URL");
        app.add_option("--rpm", rpm, "Requests per minute ceiling")->check(CLI::PositiveNumber);
        app.add_option("--retry-cap", retry_cap, "Retries on transient failures")->check(CLI::NonNegativeNumber);
        app.add_option("--temperature", temperature, "Sampling temperature");
        app.add_option("--max-tokens", max_tokens, "Maximum output tokens")->check(CLI::PositiveNumber);
    }

    ClientConfig resolve(const std::optional<fs::path>& config_file) const {
        auto c = load_client_config(config_file, [](const char* name) { return std::getenv(name); });
        if (provider) {
            auto p = parse_provider(*provider);
            if (!p) throw ValidationError("unknown provider '" + *provider + "'");
            if (*p != c.provider && !api_base) {
                // A base URL inherited from another provider would be wrong.
                c.base_url = default_base_url(*p);
            }
            c.provider = *p;
        }
        if (model) c.model = *model;
        if (api_base) c.base_url = *api_base;
        if (rpm) c.rpm = *rpm;
        if (retry_cap) c.retry_cap = *retry_cap;
        if (temperature) c.temperature = *temperature;
        if (max_tokens) c.max_output_tokens = *max_tokens;
        c.gen_params().validate();
        return c;
    }
};

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto t = std::string(trim(item));
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::vector<std::string> read_rater_ids(const std::vector<std::string>& inline_ids, const std::optional<fs::path>& file) {
    std::vector<std::string> ids;
    for (const auto& s : inline_ids) {
        for (auto& id : split_csv_list(s)) ids.push_back(std::move(id));
    }
    if (file) {
        const auto text = read_file(*file);
        for (auto line : split_lines(text)) {
            auto t = trim(line);
            if (!t.empty() && t.front() != '#') ids.emplace_back(t);
        }
    }
    return ids;
}

std::vector<Story> load_stories_if_present(const CorpusPaths& paths) {
    if (!fs::exists(paths.stories())) return {};
    return import_stories(paths.stories()).stories;
}

// Forms a group once a plot has its human story and three machine stories,
// none of them grouped yet.
std::size_t link_complete_groups(std::vector<Story>& stories) {
    std::map<std::string, std::vector<Story*>> by_plot;
    for (auto& s : stories) by_plot[s.plot_id].push_back(&s);
    std::size_t formed = 0;
    for (auto& [plot, members] : by_plot) {
        if (members.size() != kGroupSize) continue;
        std::size_t humans = 0;
        bool grouped = false;
        for (auto* s : members) {
            humans += s->source.is_human();
            grouped = grouped || s->group_id.has_value();
        }
        if (humans != 1 || grouped) continue;
        for (auto* s : members) s->group_id = "group-" + plot;
        ++formed;
    }
    return formed;
}

int cmd_generate(const fs::path& corpus, const std::optional<fs::path>& plots_file, const ClientConfig& cfg,
                 std::optional<std::size_t> fixed_target, bool allow_unverified, const std::optional<fs::path>& audit) {
    const CorpusPaths paths{corpus};
    const auto plots = import_plots(plots_file.value_or(paths.plots()));
    auto stories = load_stories_if_present(paths);

    std::map<std::string, const Story*> human_by_plot;
    std::set<std::pair<std::string, std::string>> existing;
    for (const auto& s : stories) {
        if (s.source.is_human()) human_by_plot[s.plot_id] = &s;
        existing.insert({s.plot_id, s.source.label()});
    }

    auto log = std::make_shared<AuditLog>(audit.value_or(corpus / "generation.audit.jsonl"));
    auto client = make_client(cfg, log, true);
    GenerationConfig gen;
    gen.require_verified_plot = !allow_unverified;

    std::vector<Story> produced;
    std::string traces;
    for (const auto& plot : plots) {
        if (existing.contains({plot.id, cfg.model})) {
            spdlog::info("plot {}: story by {} already present, skipping", plot.id, cfg.model);
            continue;
        }
        std::size_t target = 0;
        if (fixed_target) {
            target = *fixed_target;
        } else {
            auto it = human_by_plot.find(plot.id);
            if (it == human_by_plot.end()) {
                throw ValidationError("plot " + plot.id + ": no human story to take the target length from");
            }
            target = it->second->word_count;
        }
        auto out = generate_story(plot, target, *client, cfg.gen_params(), gen);
        spdlog::info("plot {}: {} words after {} calls (target {}, converged={}{})", plot.id,
                     out.story.word_count, out.trace.iterations.size(), target, out.trace.converged,
                     out.trace.overlong ? ", overlong" : "");
        traces += trace_to_json(out.trace);
        traces += '\n';
        produced.push_back(std::move(out.story));
    }
    stories.insert(stories.end(), produced.begin(), produced.end());
    const auto formed = link_complete_groups(stories);
    // Validate before touching the corpus files.
    parse_stories(stories_to_jsonl(stories), paths.stories().string());
    write_file_atomic(paths.stories(), stories_to_jsonl(stories));
    if (!traces.empty()) {
        std::string prior = fs::exists(paths.traces()) ? read_file(paths.traces()) : std::string();
        write_file_atomic(paths.traces(), prior + traces);
    }
    std::cout << "generated " << produced.size() << " stories, formed " << formed << " groups\n";
    return kExitOk;
}

int cmd_assess(const fs::path& stories_file, const std::optional<std::string>& tests_arg, const fs::path& out,
               const ClientConfig& cfg, std::size_t parallelism, int reask_cap, bool resume,
               const std::optional<fs::path>& audit) {
    const auto stories = import_stories(stories_file).stories;
    const auto& catalog = Catalog::builtin();
    std::vector<TtcwTest> tests;
    if (tests_arg) {
        for (const auto& id : split_csv_list(*tests_arg)) tests.push_back(catalog.at(id));
    } else {
        tests = catalog.tests();
    }
    auto log = std::make_shared<AuditLog>(audit.value_or(fs::path(out.string() + ".audit.jsonl")));
    auto client = make_client(cfg, log, resume);
    AssessorConfig ac;
    ac.parallelism = parallelism;
    ac.reask_cap = reask_cap;
    auto result = run_suite(*client, stories, tests, cfg.gen_params(), ac);
    export_machine_assessments(result.assessments, out);
    std::size_t unparseable = 0;
    for (const auto& m : result.assessments) unparseable += m.parseable() ? 0 : 1;
    std::cout << "assessed " << result.assessments.size() << " (story, test) pairs, " << unparseable
              << " unparseable, " << result.failures.size() << " failed\n";
    for (const auto& f : result.failures) {
        spdlog::error("{} / {}: {}", f.story_id, f.test_id, f.error);
    }
    return result.failures.empty() ? kExitOk : kExitTransport;
}

int cmd_serve(const fs::path& corpus, const std::string& host, int port, const std::optional<fs::path>& static_dir) {
    auto store = SessionStore::open(corpus);
    const auto created = store->create_planned_sessions();
    spdlog::info("{} sessions ({} newly created)", store->sessions().size(), created);
    httplib::Server server;
    AnnotationService service(*store);
    service.mount(server);
    if (static_dir && !server.set_mount_point("/", static_dir->string())) {
        throw ValidationError("static directory " + static_dir->string() + " does not exist");
    }
    spdlog::info("listening on http://{}:{}", host, port);
    if (!server.listen(host, port)) {
        throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    }
    return kExitOk;
}

int cmd_import(const fs::path& corpus, const std::optional<fs::path>& stories_in,
               const std::optional<fs::path>& plots_in, const std::optional<fs::path>& assessments_in, bool force) {
    const CorpusPaths paths{corpus};
    fs::create_directories(corpus);
    auto guard = [&](const fs::path& target) {
        if (fs::exists(target) && !force) {
            throw ValidationError(target.string() + " exists; pass --force to replace it");
        }
    };
    if (stories_in) {
        auto imported = import_stories(*stories_in);
        for (const auto& msg : check_human_lengths(imported.stories, {})) spdlog::warn("{}", msg);
        guard(paths.stories());
        export_stories(imported.stories, paths.stories());
        std::cout << "imported " << imported.stories.size() << " stories in " << imported.groups.size()
                  << " groups\n";
    }
    if (plots_in) {
        auto plots = import_plots(*plots_in);
        guard(paths.plots());
        export_plots(plots, paths.plots());
        std::cout << "imported " << plots.size() << " plots\n";
    }
    if (assessments_in) {
        std::set<std::string, std::less<>> known;
        for (const auto& s : load_stories_if_present(paths)) known.insert(s.id);
        AssessmentCheck check;
        if (!known.empty()) check.known_stories = &known;
        auto items = import_assessments(*assessments_in, check);
        guard(paths.assessments());
        export_assessments(items, paths.assessments(), AssessmentFormat::Jsonl);
        std::cout << "imported " << items.size() << " assessments\n";
    }
    return kExitOk;
}

int cmd_assign(const fs::path& corpus, const std::vector<std::string>& raters, std::size_t k, std::uint64_t seed,
               bool force) {
    const CorpusPaths paths{corpus};
    const auto imported = import_stories(paths.stories());
    std::vector<std::string> group_ids;
    for (const auto& g : imported.groups) group_ids.push_back(g.id);
    if (group_ids.empty()) {
        throw ValidationError(paths.stories().string() + " has no story groups");
    }
    if (fs::exists(paths.plan()) && !force) {
        throw ValidationError(paths.plan().string() + " exists; pass --force to replace it");
    }
    const auto plan = assign_raters(group_ids, raters, k, seed);
    write_file_atomic(paths.plan(), plan_to_json(plan));
    std::cout << "assigned " << plan.session_count() << " sessions over " << raters.size() << " raters\n";
    for (const auto& [rater, load] : plan.load_per_rater()) {
        std::cout << "  " << rater << ": " << load << "\n";
    }
    return kExitOk;
}

int cmd_validate(const fs::path& corpus) {
    const CorpusPaths paths{corpus};
    const auto& catalog = Catalog::builtin();
    std::vector<std::string> problems;

    const auto imported = import_stories(paths.stories());
    for (const auto& msg : check_human_lengths(imported.stories, {})) problems.push_back(msg);
    std::set<std::string, std::less<>> known;
    for (const auto& s : imported.stories) known.insert(s.id);
    std::cout << "stories: " << imported.stories.size() << " in " << imported.groups.size() << " groups\n";

    if (fs::exists(paths.plots())) {
        const auto plots = import_plots(paths.plots());
        std::set<std::string> plot_ids;
        for (const auto& p : plots) plot_ids.insert(p.id);
        for (const auto& s : imported.stories) {
            if (!plot_ids.contains(s.plot_id)) {
                problems.push_back("story " + s.id + " references unknown plot " + s.plot_id);
            }
        }
        std::cout << "plots: " << plots.size() << "\n";
    }
    if (fs::exists(paths.assessments())) {
        const auto items = import_assessments(paths.assessments(), {&catalog, &known});
        std::cout << "assessments: " << items.size() << "\n";
    }
    if (fs::exists(paths.plan())) {
        // Opening the store checks the plan and any sessions against the groups.
        auto store = SessionStore::open(corpus, catalog);
        std::size_t finalized = 0;
        for (const auto& s : store->sessions()) finalized += s.status == SessionStatus::Finalized;
        std::cout << "plan: " << store->plan().session_count() << " sessions planned, "
                  << store->sessions().size() << " opened, " << finalized << " finalized\n";
    }
    if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << "invalid: " << p << "\n";
        return kExitValidation;
    }
    std::cout << "ok\n";
    return kExitOk;
}

int cmd_report(const fs::path& corpus, const std::optional<fs::path>& machine_file, const std::string& format,
               const std::optional<fs::path>& out) {
    const auto fmt = parse_report_format(format);
    const auto snapshot = load_snapshot(corpus);
    std::vector<MachineAssessment> machine;
    if (machine_file) machine = import_machine_assessments(*machine_file);
    const auto text = render_report(build_report(snapshot, machine), fmt);
    if (out) {
        write_file_atomic(*out, text);
    } else {
        std::cout << text;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Torrance Tests of Creative Writing harness: generation, assessment, annotation and reporting"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::optional<fs::path> config_file;
    bool verbose = false;
    std::uint64_t seed = 0;
    app.add_option("--config", config_file, "Client config file (JSON)")->check(CLI::ExistingFile);
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_option("--seed", seed, "Seed for all randomness (assignment, presentation order)");

    ClientFlags client_flags;

    auto* gen = app.add_subcommand("generate", "Generate length-matched stories from plots");
    fs::path gen_corpus = ".";
    std::optional<fs::path> gen_plots, gen_audit;
    std::optional<std::size_t> gen_target;
    bool gen_from_human = false, gen_unverified = false;
    gen->add_option("--corpus", gen_corpus, "Corpus directory receiving stories and traces");
    gen->add_option("--plots", gen_plots, "Plot file (default: <corpus>/plots.jsonl)")->check(CLI::ExistingFile);
    auto* from_human = gen->add_flag("--target-from-human", gen_from_human,
                                     "Target the paired human story's word count");
    gen->add_option("--target", gen_target, "Fixed target word count")->excludes(from_human);
    gen->add_flag("--allow-unverified-plots", gen_unverified, "Generate from plots nobody has reviewed");
    gen->add_option("--audit", gen_audit, "Audit log (default: <corpus>/generation.audit.jsonl)");
    client_flags.add_to(*gen);

    auto* assess = app.add_subcommand("assess", "Administer TTCW tests with an LLM assessor");
    fs::path assess_stories, assess_out;
    std::optional<std::string> assess_tests;
    std::optional<fs::path> assess_audit;
    std::size_t parallelism = 4;
    int reask_cap = 2;
    bool no_resume = false;
    assess->add_option("--stories", assess_stories, "Story file")->required()->check(CLI::ExistingFile);
    assess->add_option("--tests", assess_tests, "Comma-separated test ids (default: all 14)");
    assess->add_option("--out", assess_out, "Machine assessment output (JSONL)")->required();
    assess->add_option("--parallelism", parallelism, "Concurrent requests")->check(CLI::PositiveNumber);
    assess->add_option("--reask-cap", reask_cap, "Re-asks after an unparseable reply")->check(CLI::NonNegativeNumber);
    assess->add_option("--audit", assess_audit, "Audit log (default: <out>.audit.jsonl)");
    assess->add_flag("--no-resume", no_resume, "Reissue calls already present in the audit log");
    client_flags.add_to(*assess);

    auto* serve = app.add_subcommand("serve", "Serve the annotation REST API");
    fs::path serve_corpus;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<fs::path> static_dir;
    serve->add_option("--corpus", serve_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
    serve->add_option("--static", static_dir, "Directory of UI assets served at /");

    auto* imp = app.add_subcommand("import", "Validate files and copy them into a corpus");
    fs::path imp_corpus;
    std::optional<fs::path> imp_stories, imp_plots, imp_assessments;
    bool imp_force = false;
    imp->add_option("--corpus", imp_corpus, "Corpus directory")->required();
    imp->add_option("--stories", imp_stories, "Story JSONL")->check(CLI::ExistingFile);
    imp->add_option("--plots", imp_plots, "Plot JSONL")->check(CLI::ExistingFile);
    imp->add_option("--assessments", imp_assessments, "Expert assessments (.jsonl or .csv)")->check(CLI::ExistingFile);
    imp->add_flag("--force", imp_force, "Replace existing corpus files");

    auto* assign = app.add_subcommand("assign", "Assign raters to story groups (writes plan.json)");
    fs::path assign_corpus;
    std::vector<std::string> assign_raters_inline;
    std::optional<fs::path> assign_raters_file;
    std::size_t assign_k = 3;
    bool assign_force = false;
    assign->add_option("--corpus", assign_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    assign->add_option("--raters", assign_raters_inline, "Rater ids (comma-separated or repeated)");
    assign->add_option("--raters-file", assign_raters_file, "File with one rater id per line")
        ->check(CLI::ExistingFile);
    assign->add_option("-k,--per-group", assign_k, "Raters per group")->check(CLI::PositiveNumber);
    assign->add_flag("--force", assign_force, "Replace an existing plan");

    auto* report = app.add_subcommand("report", "Compute and render agreement statistics");
    fs::path report_corpus;
    std::optional<fs::path> report_machine, report_out;
    std::string report_format = "md";
    report->add_option("--corpus", report_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--machine", report_machine, "Machine assessments (JSONL)")->check(CLI::ExistingFile);
    report->add_option("--format", report_format, "md, csv or html");
    report->add_option("--out", report_out, "Output path (default: stdout)");

    auto* validate = app.add_subcommand("validate", "Check every corpus file and cross-reference");
    fs::path validate_corpus;
    validate->add_option("--corpus", validate_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "\n" << app.help();
        return kExitUsage;
    }

    auto logger = spdlog::stderr_color_mt("ttcw");
    spdlog::set_default_logger(logger);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*gen) {
            if (!gen_from_human && !gen_target) {
                std::cerr << "generate needs --target-from-human or --target\n\n" << gen->help();
                return kExitUsage;
            }
            return cmd_generate(gen_corpus, gen_plots, client_flags.resolve(config_file), gen_target, gen_unverified,
                                gen_audit);
        }
        if (*assess) {
            return cmd_assess(assess_stories, assess_tests, assess_out, client_flags.resolve(config_file), parallelism,
                              reask_cap, !no_resume, assess_audit);
        }
        if (*serve) return cmd_serve(serve_corpus, host, port, static_dir);
        if (*imp) {
            if (!imp_stories && !imp_plots && !imp_assessments) {
                std::cerr << "import needs --stories, --plots or --assessments\n\n" << imp->help();
                return kExitUsage;
            }
            return cmd_import(imp_corpus, imp_stories, imp_plots, imp_assessments, imp_force);
        }
        if (*assign) {
            const auto raters = read_rater_ids(assign_raters_inline, assign_raters_file);
            return cmd_assign(assign_corpus, raters, assign_k, seed, assign_force);
        }
        if (*report) return cmd_report(report_corpus, report_machine, report_format, report_out);
        if (*validate) return cmd_validate(validate_corpus);
    } catch (const TransportError& e) {
        spdlog::error("{}", e.what());
        return kExitTransport;
    } catch (const ClientError& e) {
        spdlog::error("{}", e.what());
        return kExitTransport;
    } catch (const GenerationFailure& e) {
        spdlog::error("{}", e.what());
        return kExitTransport;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    }
    return kExitUsage;
}
