#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttcw/corpus.h"
#include "ttcw/errors.h"
#include "ttcw/registry.h"
#include "ttcw/util.h"

namespace httplib {
class Server;
}

namespace ttcw {

enum class Attribution { ExperiencedWriter, AmateurWriter, WrittenByAI };

inline constexpr std::array<Attribution, 3> kAllAttributions = {
    Attribution::ExperiencedWriter, Attribution::AmateurWriter, Attribution::WrittenByAI};

/// The option text shown to raters: "An experienced writer", ...
std::string_view attribution_label(Attribution a);
std::optional<Attribution> parse_attribution(std::string_view label);

enum class SessionStatus { Open, Finalized };

std::string_view to_string(SessionStatus s);

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// The request conflicts with current state: duplicate session, write to a
/// finalized session.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// finalize_session on an incomplete session. `missing()` lists each gap,
/// e.g. "Story B / fluency_3", "ranking", "attribution for Story D".
class IncompleteSessionError : public ValidationError {
public:
    explicit IncompleteSessionError(std::vector<std::string> missing);
    const std::vector<std::string>& missing() const { return missing_; }

private:
    std::vector<std::string> missing_;
};

struct Session {
    std::string id;
    std::string group_id;
    std::string rater_id;
    std::uint64_t seed = 0;
    std::vector<std::string> presentation_order;
    /// story id -> assessment, keyed by (story_id, test_id).
    std::map<std::pair<std::string, std::string>, Assessment> assessments;
    std::optional<std::map<std::string, int>> ranking;  // story id -> 1..4
    std::map<std::string, Attribution> attributions;   // story id -> guess
    SessionStatus status = SessionStatus::Open;
    Timestamp opened_at{};
    std::optional<Timestamp> finalized_at;

    /// "Story A".."Story D" following presentation order.
    std::string label_for(std::string_view story_id) const;
    /// Accepts "Story B" or "B". Throws NotFoundError.
    const std::string& story_for_label(std::string_view label) const;
    bool contains_story(std::string_view story_id) const;

    bool operator==(const Session&) const = default;
};

std::string session_id_for(std::string_view group_id, std::string_view rater_id);

/// Deterministic Fisher-Yates over a splitmix64 stream, so presentation
/// orders and plans replay identically on every platform.
std::vector<std::string> seeded_permutation(std::vector<std::string> items, std::uint64_t seed);

/// Seed for the (group, rater) session under a plan seed.
std::uint64_t derive_session_seed(std::uint64_t plan_seed, std::string_view group_id, std::string_view rater_id);

struct AssignmentPlan {
    std::uint64_t seed = 0;
    std::size_t raters_per_group = 3;
    std::map<std::string, std::vector<std::string>> groups;  // group id -> rater ids

    std::size_t session_count() const;
    std::map<std::string, std::size_t> load_per_rater() const;
    bool operator==(const AssignmentPlan&) const = default;
};

/// Assigns each group to k distinct raters, always choosing among the least
/// loaded raters with seeded tie-breaking, which keeps max-min load <= 1.
/// Throws PreconditionError when fewer than k distinct raters are given.
AssignmentPlan assign_raters(const std::vector<std::string>& group_ids, const std::vector<std::string>& raters,
                             std::size_t k, std::uint64_t seed);

std::string plan_to_json(const AssignmentPlan& plan);
AssignmentPlan plan_from_json(std::string_view text);

std::string sessions_to_jsonl(const std::vector<Session>& sessions);
std::vector<Session> parse_sessions(std::string_view jsonl, std::string_view origin = "<sessions>");

/// Thread-safe session engine. Writes are serialized per session; reads
/// return snapshots. When a persistence path is set, every mutation rewrites
/// the sessions file.
class SessionStore {
public:
    SessionStore(std::vector<Story> stories, std::vector<StoryGroup> groups, AssignmentPlan plan,
                 const Catalog& catalog = Catalog::builtin(), WallClock clock = now_utc);

    /// Loads stories, plan and existing sessions from a corpus directory and
    /// persists back to it.
    static std::unique_ptr<SessionStore> open(const std::filesystem::path& corpus_dir,
                                              const Catalog& catalog = Catalog::builtin());

    void set_persistence(std::filesystem::path sessions_file);
    /// Restores previously persisted sessions (validated against the plan).
    void restore(std::vector<Session> sessions);

    Session create_session(std::string_view group_id, std::string_view rater_id, std::uint64_t seed);
    /// Creates every planned session not yet present, seeding from the plan.
    std::size_t create_planned_sessions();

    void record_assessment(std::string_view session_id, std::string_view story_id, std::string_view test_id,
                           Verdict verdict, std::string_view rationale);
    /// `ranking` maps story id -> rank and must be a bijection onto 1..4.
    void record_ranking(std::string_view session_id, const std::map<std::string, int>& ranking);
    void record_attribution(std::string_view session_id, std::string_view story_id, Attribution attribution);
    Session finalize_session(std::string_view session_id);

    Session get(std::string_view session_id) const;
    std::vector<Session> sessions() const;
    std::vector<Session> sessions_for_rater(std::string_view rater_id) const;

    const Story& story(std::string_view story_id) const;
    const Catalog& catalog() const { return *catalog_; }
    const AssignmentPlan& plan() const { return plan_; }

    /// Assessments of all finalized sessions, in session then cell order.
    std::vector<Assessment> finalized_assessments() const;

private:
    struct Entry {
        mutable std::mutex mu;
        Session session;
    };

    Entry& entry(std::string_view session_id) const;
    void persist() const;
    static void require_open(const Session& s);

    std::map<std::string, Story, std::less<>> stories_;
    std::map<std::string, StoryGroup, std::less<>> groups_;
    AssignmentPlan plan_;
    const Catalog* catalog_;
    WallClock clock_;

    mutable std::mutex index_mu_;
    std::map<std::string, std::unique_ptr<Entry>, std::less<>> sessions_;
    std::optional<std::filesystem::path> persist_path_;
    mutable std::mutex persist_mu_;
};

/// REST front end over a SessionStore. Bodies are JSON. Story sources and
/// ids are never included for open sessions; stories are addressed by label.
class AnnotationService {
public:
    explicit AnnotationService(SessionStore& store);

    /// Registers all routes on `server`.
    void mount(httplib::Server& server);

private:
    SessionStore& store_;
};

}  // namespace ttcw
