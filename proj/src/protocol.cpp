#include "ttcw/protocol.h"

#include <algorithm>
#include <numeric>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ttcw/errors.h"

namespace ttcw {

using json = nlohmann::json;

std::string_view attribution_label(Attribution a) {
    switch (a) {
        case Attribution::ExperiencedWriter: return "An experienced writer";
        case Attribution::AmateurWriter: return "An amateur writer";
        case Attribution::WrittenByAI: return "Written by AI";
    }
    return "?";
}

std::optional<Attribution> parse_attribution(std::string_view label) {
    for (auto a : kAllAttributions) {
        if (attribution_label(a) == label) {
            return a;
        }
    }
    if (label == "ExperiencedWriter") return Attribution::ExperiencedWriter;
    if (label == "AmateurWriter") return Attribution::AmateurWriter;
    if (label == "WrittenByAI") return Attribution::WrittenByAI;
    return std::nullopt;
}

std::string_view to_string(SessionStatus s) { return s == SessionStatus::Open ? "Open" : "Finalized"; }

namespace {

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace

IncompleteSessionError::IncompleteSessionError(std::vector<std::string> missing)
    : ValidationError("session incomplete; missing: " + join(missing, ", ")), missing_(std::move(missing)) {}

// ---------------------------------------------------------------------------
// Session helpers

std::string Session::label_for(std::string_view story_id) const {
    for (std::size_t i = 0; i < presentation_order.size(); ++i) {
        if (presentation_order[i] == story_id) {
            return std::string("Story ") + static_cast<char>('A' + i);
        }
    }
    throw NotFoundError("story not in session " + id);
}

const std::string& Session::story_for_label(std::string_view label) const {
    if (label.starts_with("Story ")) {
        label.remove_prefix(6);
    }
    if (label.size() == 1 && label[0] >= 'A' && static_cast<std::size_t>(label[0] - 'A') < presentation_order.size()) {
        return presentation_order[static_cast<std::size_t>(label[0] - 'A')];
    }
    throw NotFoundError("unknown story label '" + std::string(label) + "' in session " + id);
}

bool Session::contains_story(std::string_view story_id) const {
    return std::find(presentation_order.begin(), presentation_order.end(), story_id) != presentation_order.end();
}

std::string session_id_for(std::string_view group_id, std::string_view rater_id) {
    return std::string(group_id) + "--" + std::string(rater_id);
}

namespace {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    /// Uniform in [0, bound), rejection sampled.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v = 0;
        do {
            v = next();
        } while (v >= limit);
        return v % bound;
    }

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::vector<std::string> seeded_permutation(std::vector<std::string> items, std::uint64_t seed) {
    SplitMix64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
    return items;
}

std::uint64_t derive_session_seed(std::uint64_t plan_seed, std::string_view group_id, std::string_view rater_id) {
    std::string key(group_id);
    key += '\0';
    key += rater_id;
    return SplitMix64(plan_seed ^ fnv1a(key)).next();
}

// ---------------------------------------------------------------------------
// Assignment

std::size_t AssignmentPlan::session_count() const {
    std::size_t n = 0;
    for (const auto& [g, raters] : groups) {
        n += raters.size();
    }
    return n;
}

std::map<std::string, std::size_t> AssignmentPlan::load_per_rater() const {
    std::map<std::string, std::size_t> load;
    for (const auto& [g, raters] : groups) {
        for (const auto& r : raters) {
            ++load[r];
        }
    }
    return load;
}

AssignmentPlan assign_raters(const std::vector<std::string>& group_ids, const std::vector<std::string>& raters,
                             std::size_t k, std::uint64_t seed) {
    if (k == 0) {
        throw PreconditionError("assign_raters: k must be positive");
    }
    const std::set<std::string> distinct(raters.begin(), raters.end());
    if (distinct.size() != raters.size()) {
        throw PreconditionError("assign_raters: rater ids must be distinct");
    }
    if (raters.size() < k) {
        throw PreconditionError("assign_raters: " + std::to_string(k) + " raters per group requested but only " +
                                std::to_string(raters.size()) + " available");
    }
    const std::set<std::string> distinct_groups(group_ids.begin(), group_ids.end());
    if (distinct_groups.size() != group_ids.size()) {
        throw PreconditionError("assign_raters: group ids must be distinct");
    }

    AssignmentPlan plan;
    plan.seed = seed;
    plan.raters_per_group = k;
    SplitMix64 rng(seed);
    std::map<std::string, std::size_t> load;
    for (const auto& r : raters) {
        load[r] = 0;
    }
    for (const auto& gid : seeded_permutation(group_ids, rng.next())) {
        auto candidates = seeded_permutation(raters, rng.next());
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](const std::string& a, const std::string& b) { return load[a] < load[b]; });
        candidates.resize(k);
        for (const auto& r : candidates) {
            ++load[r];
        }
        std::sort(candidates.begin(), candidates.end());
        plan.groups[gid] = std::move(candidates);
    }
    return plan;
}

std::string plan_to_json(const AssignmentPlan& plan) {
    json j = {{"seed", plan.seed}, {"raters_per_group", plan.raters_per_group}, {"groups", plan.groups}};
    return j.dump(2) + "\n";
}

AssignmentPlan plan_from_json(std::string_view text) {
    try {
        auto j = json::parse(text);
        AssignmentPlan plan;
        plan.seed = j.at("seed").get<std::uint64_t>();
        plan.raters_per_group = j.at("raters_per_group").get<std::size_t>();
        plan.groups = j.at("groups").get<std::map<std::string, std::vector<std::string>>>();
        for (const auto& [g, raters] : plan.groups) {
            const std::set<std::string> distinct(raters.begin(), raters.end());
            if (distinct.size() != raters.size() || raters.size() != plan.raters_per_group) {
                throw ValidationError("plan: group " + g + " must have " + std::to_string(plan.raters_per_group) +
                                      " distinct raters");
            }
        }
        return plan;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("plan: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Session serialization

namespace {

json assessment_json(const Assessment& a) {
    return {{"rater_id", a.rater_id},
            {"story_id", a.story_id},
            {"test_id", a.test_id},
            {"verdict", to_string(a.verdict)},
            {"rationale", a.rationale},
            {"recorded_at", format_timestamp(a.recorded_at)},
            {"last_edited_at", format_timestamp(a.last_edited_at)}};
}

json session_json(const Session& s) {
    json assessments = json::array();
    for (const auto& [key, a] : s.assessments) {
        assessments.push_back(assessment_json(a));
    }
    json attributions = json::object();
    for (const auto& [story, a] : s.attributions) {
        attributions[story] = attribution_label(a);
    }
    json j = {{"id", s.id},
              {"group_id", s.group_id},
              {"rater_id", s.rater_id},
              {"seed", s.seed},
              {"presentation_order", s.presentation_order},
              {"status", to_string(s.status)},
              {"opened_at", format_timestamp(s.opened_at)},
              {"assessments", assessments},
              {"attributions", attributions}};
    j["ranking"] = s.ranking ? json(*s.ranking) : json(nullptr);
    j["finalized_at"] = s.finalized_at ? json(format_timestamp(*s.finalized_at)) : json(nullptr);
    return j;
}

}  // namespace

std::string sessions_to_jsonl(const std::vector<Session>& sessions) {
    std::string out;
    for (const auto& s : sessions) {
        out += session_json(s).dump();
        out += '\n';
    }
    return out;
}

std::vector<Session> parse_sessions(std::string_view jsonl, std::string_view origin) {
    std::vector<Session> out;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto where = std::string(origin) + ":" + std::to_string(line_no);
        try {
            auto j = json::parse(line);
            Session s;
            s.id = j.at("id").get<std::string>();
            s.group_id = j.at("group_id").get<std::string>();
            s.rater_id = j.at("rater_id").get<std::string>();
            s.seed = j.at("seed").get<std::uint64_t>();
            s.presentation_order = j.at("presentation_order").get<std::vector<std::string>>();
            const auto status = j.at("status").get<std::string>();
            if (status != "Open" && status != "Finalized") {
                throw ValidationError(where + ": bad status '" + status + "'");
            }
            s.status = status == "Open" ? SessionStatus::Open : SessionStatus::Finalized;
            s.opened_at = parse_timestamp(j.at("opened_at").get<std::string>());
            if (!j.at("finalized_at").is_null()) {
                s.finalized_at = parse_timestamp(j.at("finalized_at").get<std::string>());
            }
            for (const auto& a : j.at("assessments")) {
                auto parsed = parse_assessments(a.dump(), AssessmentFormat::Jsonl, where);
                auto& rec = parsed.front();
                s.assessments[{rec.story_id, rec.test_id}] = std::move(rec);
            }
            if (!j.at("ranking").is_null()) {
                s.ranking = j.at("ranking").get<std::map<std::string, int>>();
            }
            for (const auto& [story, label] : j.at("attributions").items()) {
                auto a = parse_attribution(label.get<std::string>());
                if (!a) {
                    throw ValidationError(where + ": bad attribution '" + label.get<std::string>() + "'");
                }
                s.attributions[story] = *a;
            }
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SessionStore

SessionStore::SessionStore(std::vector<Story> stories, std::vector<StoryGroup> groups, AssignmentPlan plan,
                           const Catalog& catalog, WallClock clock)
    : plan_(std::move(plan)), catalog_(&catalog), clock_(std::move(clock)) {
    for (auto& s : stories) {
        auto id = s.id;
        stories_.emplace(std::move(id), std::move(s));
    }
    for (auto& g : groups) {
        for (const auto& sid : g.story_ids) {
            if (!stories_.contains(sid)) {
                throw ValidationError("group " + g.id + " references unknown story " + sid);
            }
        }
        auto id = g.id;
        groups_.emplace(std::move(id), std::move(g));
    }
    for (const auto& [gid, raters] : plan_.groups) {
        if (!groups_.contains(gid)) {
            throw ValidationError("plan references unknown group " + gid);
        }
    }
}

std::unique_ptr<SessionStore> SessionStore::open(const std::filesystem::path& corpus_dir, const Catalog& catalog) {
    const CorpusPaths paths{corpus_dir};
    auto imported = import_stories(paths.stories());
    if (!std::filesystem::exists(paths.plan())) {
        throw ValidationError(paths.plan().string() + " not found; run `ttcw assign` first");
    }
    auto plan = plan_from_json(read_file(paths.plan()));
    auto store = std::make_unique<SessionStore>(std::move(imported.stories), std::move(imported.groups),
                                                std::move(plan), catalog);
    if (std::filesystem::exists(paths.sessions())) {
        store->restore(parse_sessions(read_file(paths.sessions()), paths.sessions().string()));
    }
    store->set_persistence(paths.sessions());
    return store;
}

void SessionStore::set_persistence(std::filesystem::path sessions_file) {
    std::lock_guard lock(persist_mu_);
    persist_path_ = std::move(sessions_file);
}

void SessionStore::restore(std::vector<Session> sessions) {
    std::lock_guard lock(index_mu_);
    for (auto& s : sessions) {
        auto git = groups_.find(s.group_id);
        if (git == groups_.end()) {
            throw ValidationError("session " + s.id + " references unknown group " + s.group_id);
        }
        auto pit = plan_.groups.find(s.group_id);
        if (pit == plan_.groups.end() ||
            std::find(pit->second.begin(), pit->second.end(), s.rater_id) == pit->second.end()) {
            throw ValidationError("session " + s.id + ": rater " + s.rater_id + " is not assigned to group " +
                                  s.group_id + " in the plan");
        }
        auto sorted_order = s.presentation_order;
        auto sorted_group = git->second.story_ids;
        std::sort(sorted_order.begin(), sorted_order.end());
        std::sort(sorted_group.begin(), sorted_group.end());
        if (sorted_order != sorted_group) {
            throw ValidationError("session " + s.id + " presentation order does not match group " + s.group_id);
        }
        const auto id = s.id;
        auto e = std::make_unique<Entry>();
        e->session = std::move(s);
        if (!sessions_.emplace(id, std::move(e)).second) {
            throw ValidationError("duplicate session " + id);
        }
    }
}

Session SessionStore::create_session(std::string_view group_id, std::string_view rater_id, std::uint64_t seed) {
    auto pit = plan_.groups.find(std::string(group_id));
    if (pit == plan_.groups.end() ||
        std::find(pit->second.begin(), pit->second.end(), rater_id) == pit->second.end()) {
        throw PreconditionError("rater " + std::string(rater_id) + " is not assigned to group " +
                                std::string(group_id));
    }
    const auto& group = groups_.find(group_id)->second;
    Session s;
    s.id = session_id_for(group_id, rater_id);
    s.group_id = std::string(group_id);
    s.rater_id = std::string(rater_id);
    s.seed = seed;
    s.presentation_order = seeded_permutation(group.story_ids, seed);
    s.opened_at = clock_();
    {
        std::lock_guard lock(index_mu_);
        if (sessions_.contains(s.id)) {
            throw ConflictError("session already exists for group " + s.group_id + " and rater " + s.rater_id);
        }
        auto e = std::make_unique<Entry>();
        e->session = s;
        sessions_.emplace(s.id, std::move(e));
    }
    persist();
    return s;
}

std::size_t SessionStore::create_planned_sessions() {
    std::size_t created = 0;
    for (const auto& [gid, raters] : plan_.groups) {
        for (const auto& r : raters) {
            {
                std::lock_guard lock(index_mu_);
                if (sessions_.contains(session_id_for(gid, r))) {
                    continue;
                }
            }
            create_session(gid, r, derive_session_seed(plan_.seed, gid, r));
            ++created;
        }
    }
    return created;
}

SessionStore::Entry& SessionStore::entry(std::string_view session_id) const {
    std::lock_guard lock(index_mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw NotFoundError("no session '" + std::string(session_id) + "'");
    }
    return *it->second;
}

void SessionStore::require_open(const Session& s) {
    if (s.status != SessionStatus::Open) {
        throw ConflictError("session " + s.id + " is finalized");
    }
}

void SessionStore::record_assessment(std::string_view session_id, std::string_view story_id,
                                     std::string_view test_id, Verdict verdict, std::string_view rationale) {
    auto& e = entry(session_id);
    {
        std::lock_guard lock(e.mu);
        auto& s = e.session;
        require_open(s);
        if (!s.contains_story(story_id)) {
            throw NotFoundError("story not in session " + s.id);
        }
        if (!catalog_->contains(test_id)) {
            throw NotFoundError("unknown test id '" + std::string(test_id) + "'");
        }
        if (trim(rationale).empty()) {
            throw ValidationError("rationale must not be empty");
        }
        const auto now = clock_();
        auto key = std::make_pair(std::string(story_id), std::string(test_id));
        auto it = s.assessments.find(key);
        if (it == s.assessments.end()) {
            Assessment a;
            a.rater_id = s.rater_id;
            a.story_id = key.first;
            a.test_id = key.second;
            a.verdict = verdict;
            a.rationale = std::string(rationale);
            a.recorded_at = now;
            a.last_edited_at = now;
            s.assessments.emplace(std::move(key), std::move(a));
        } else {
            it->second.verdict = verdict;
            it->second.rationale = std::string(rationale);
            it->second.last_edited_at = now;
        }
    }
    persist();
}

void SessionStore::record_ranking(std::string_view session_id, const std::map<std::string, int>& ranking) {
    auto& e = entry(session_id);
    {
        std::lock_guard lock(e.mu);
        auto& s = e.session;
        require_open(s);
        if (ranking.size() != s.presentation_order.size()) {
            throw ValidationError("ranking must cover all " + std::to_string(s.presentation_order.size()) +
                                  " stories");
        }
        std::set<int> ranks;
        for (const auto& [story, rank] : ranking) {
            if (!s.contains_story(story)) {
                throw NotFoundError("story not in session " + s.id);
            }
            if (rank < 1 || rank > static_cast<int>(s.presentation_order.size())) {
                throw ValidationError("rank " + std::to_string(rank) + " out of range 1.." +
                                      std::to_string(s.presentation_order.size()));
            }
            if (!ranks.insert(rank).second) {
                throw ValidationError("rank " + std::to_string(rank) + " assigned twice");
            }
        }
        s.ranking = ranking;
    }
    persist();
}

void SessionStore::record_attribution(std::string_view session_id, std::string_view story_id,
                                      Attribution attribution) {
    auto& e = entry(session_id);
    {
        std::lock_guard lock(e.mu);
        auto& s = e.session;
        require_open(s);
        if (!s.contains_story(story_id)) {
            throw NotFoundError("story not in session " + s.id);
        }
        s.attributions[std::string(story_id)] = attribution;
    }
    persist();
}

Session SessionStore::finalize_session(std::string_view session_id) {
    auto& e = entry(session_id);
    Session snapshot;
    {
        std::lock_guard lock(e.mu);
        auto& s = e.session;
        require_open(s);
        std::vector<std::string> missing;
        for (const auto& sid : s.presentation_order) {
            for (const auto& t : catalog_->tests()) {
                if (!s.assessments.contains({sid, t.id})) {
                    missing.push_back(s.label_for(sid) + " / " + t.id);
                }
            }
        }
        if (!s.ranking) {
            missing.emplace_back("ranking");
        }
        for (const auto& sid : s.presentation_order) {
            if (!s.attributions.contains(sid)) {
                missing.push_back("attribution for " + s.label_for(sid));
            }
        }
        if (!missing.empty()) {
            throw IncompleteSessionError(std::move(missing));
        }
        s.status = SessionStatus::Finalized;
        s.finalized_at = clock_();
        snapshot = s;
    }
    persist();
    return snapshot;
}

Session SessionStore::get(std::string_view session_id) const {
    auto& e = entry(session_id);
    std::lock_guard lock(e.mu);
    return e.session;
}

std::vector<Session> SessionStore::sessions() const {
    std::vector<Entry*> entries;
    {
        std::lock_guard lock(index_mu_);
        for (const auto& [id, e] : sessions_) {
            entries.push_back(e.get());
        }
    }
    std::vector<Session> out;
    out.reserve(entries.size());
    for (auto* e : entries) {
        std::lock_guard lock(e->mu);
        out.push_back(e->session);
    }
    return out;
}

std::vector<Session> SessionStore::sessions_for_rater(std::string_view rater_id) const {
    auto all = sessions();
    std::erase_if(all, [&](const Session& s) { return s.rater_id != rater_id; });
    return all;
}

const Story& SessionStore::story(std::string_view story_id) const {
    auto it = stories_.find(story_id);
    if (it == stories_.end()) {
        throw NotFoundError("no story '" + std::string(story_id) + "'");
    }
    return it->second;
}

std::vector<Assessment> SessionStore::finalized_assessments() const {
    std::vector<Assessment> out;
    for (const auto& s : sessions()) {
        if (s.status != SessionStatus::Finalized) {
            continue;
        }
        for (const auto& [key, a] : s.assessments) {
            out.push_back(a);
        }
    }
    return out;
}

void SessionStore::persist() const {
    std::lock_guard lock(persist_mu_);
    if (!persist_path_) {
        return;
    }
    write_file_atomic(*persist_path_, sessions_to_jsonl(sessions()));
}

}  // namespace ttcw
