#include <functional>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ttcw/errors.h"
#include "ttcw/protocol.h"

namespace ttcw {

using json = nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

json progress_json(const Session& s, const Catalog& catalog) {
    return {{"assessed", s.assessments.size()}, {"required", s.presentation_order.size() * catalog.size()}};
}

// Open sessions expose stories by label only; ids, titles and sources appear
// once the session is finalized. Only human stories carry titles.
json session_view(const SessionStore& store, const Session& s) {
    const bool revealed = s.status == SessionStatus::Finalized;
    json stories = json::array();
    for (const auto& sid : s.presentation_order) {
        const auto& story = store.story(sid);
        json v = {{"label", s.label_for(sid)}, {"text", story.text}, {"word_count", story.word_count}};
        if (revealed) {
            if (story.title) v["title"] = *story.title;
            v["story_id"] = story.id;
            v["source"] = story.source.label();
        }
        stories.push_back(std::move(v));
    }
    json tests = json::array();
    for (const auto& t : store.catalog().tests()) {
        tests.push_back({{"id", t.id},
                         {"dimension", to_string(t.dimension)},
                         {"name", t.name},
                         {"question", t.question},
                         {"instruction", render_human_instruction(t)}});
    }
    json assessments = json::array();
    for (const auto& [key, a] : s.assessments) {
        assessments.push_back({{"story", s.label_for(a.story_id)},
                               {"test_id", a.test_id},
                               {"verdict", to_string(a.verdict)},
                               {"rationale", a.rationale},
                               {"recorded_at", format_timestamp(a.recorded_at)},
                               {"last_edited_at", format_timestamp(a.last_edited_at)}});
    }
    json ranking = nullptr;
    if (s.ranking) {
        ranking = json::object();
        for (const auto& [sid, rank] : *s.ranking) {
            ranking[s.label_for(sid)] = rank;
        }
    }
    json attributions = json::object();
    for (const auto& [sid, a] : s.attributions) {
        attributions[s.label_for(sid)] = attribution_label(a);
    }
    json options = json::array();
    for (auto a : kAllAttributions) {
        options.push_back(attribution_label(a));
    }
    json v = {{"id", s.id},
              {"group_id", s.group_id},
              {"rater_id", s.rater_id},
              {"status", to_string(s.status)},
              {"opened_at", format_timestamp(s.opened_at)},
              {"stories", stories},
              {"tests", tests},
              {"assessments", assessments},
              {"ranking", ranking},
              {"attributions", attributions},
              {"attribution_options", options},
              {"progress", progress_json(s, store.catalog())}};
    v["finalized_at"] = s.finalized_at ? json(format_timestamp(*s.finalized_at)) : json(nullptr);
    return v;
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, json{{"error", message}});
}

// Maps domain exceptions onto HTTP status codes.
void guarded(httplib::Response& res, const std::function<void()>& body) {
    try {
        body();
    } catch (const NotFoundError& e) {
        reply_error(res, 404, e.what());
    } catch (const ConflictError& e) {
        reply_error(res, 409, e.what());
    } catch (const IncompleteSessionError& e) {
        reply(res, 422, json{{"error", e.what()}, {"missing", e.missing()}});
    } catch (const ValidationError& e) {
        reply_error(res, 400, e.what());
    } catch (const PreconditionError& e) {
        reply_error(res, 400, e.what());
    } catch (const json::exception& e) {
        reply_error(res, 400, std::string("malformed JSON body: ") + e.what());
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        reply_error(res, 500, "internal error");
    }
}

std::string body_string(const json& body, const char* field) {
    auto it = body.find(field);
    if (it == body.end() || !it->is_string()) {
        throw ValidationError(std::string("body needs string field '") + field + "'");
    }
    return it->get<std::string>();
}

}  // namespace

AnnotationService::AnnotationService(SessionStore& store) : store_(store) {}

void AnnotationService::mount(httplib::Server& server) {
    server.Get("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto rater = req.get_param_value("rater");
            const auto sessions = rater.empty() ? store_.sessions() : store_.sessions_for_rater(rater);
            json out = json::array();
            for (const auto& s : sessions) {
                out.push_back({{"id", s.id},
                               {"group_id", s.group_id},
                               {"rater_id", s.rater_id},
                               {"status", to_string(s.status)},
                               {"progress", progress_json(s, store_.catalog())}});
            }
            reply(res, 200, out);
        });
    });

    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { reply(res, 200, session_view(store_, store_.get(req.matches[1].str()))); });
    });

    server.Put(R"(/sessions/([^/]+)/assessments/([^/]+)/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] {
                       const auto id = req.matches[1].str();
                       const auto story_id = store_.get(id).story_for_label(req.matches[2].str());
                       const auto body = json::parse(req.body);
                       const auto verdict = parse_verdict_label(body_string(body, "verdict"));
                       if (!verdict) {
                           throw ValidationError("verdict must be \"Yes\" or \"No\"");
                       }
                       store_.record_assessment(id, story_id, req.matches[3].str(), *verdict,
                                                body_string(body, "rationale"));
                       reply(res, 200, session_view(store_, store_.get(id)));
                   });
               });

    server.Put(R"(/sessions/([^/]+)/ranking)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const auto session = store_.get(id);
            const auto body = json::parse(req.body);
            if (!body.is_object()) {
                throw ValidationError("ranking body must map story labels to ranks");
            }
            std::map<std::string, int> ranking;
            for (const auto& [label, rank] : body.items()) {
                if (!rank.is_number_integer()) {
                    throw ValidationError("rank for " + label + " must be an integer");
                }
                const auto& sid = session.story_for_label(label);
                if (!ranking.emplace(sid, rank.get<int>()).second) {
                    throw ValidationError("story " + label + " ranked twice");
                }
            }
            store_.record_ranking(id, ranking);
            reply(res, 200, session_view(store_, store_.get(id)));
        });
    });

    server.Put(R"(/sessions/([^/]+)/attributions/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] {
                       const auto id = req.matches[1].str();
                       const auto story_id = store_.get(id).story_for_label(req.matches[2].str());
                       const auto body = json::parse(req.body);
                       const auto label = body_string(body, "attribution");
                       const auto attribution = parse_attribution(label);
                       if (!attribution) {
                           throw ValidationError("unknown attribution '" + label + "'");
                       }
                       store_.record_attribution(id, story_id, *attribution);
                       reply(res, 200, session_view(store_, store_.get(id)));
                   });
               });

    server.Post(R"(/sessions/([^/]+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto finalized = store_.finalize_session(req.matches[1].str());
            reply(res, 200, session_view(store_, finalized));
        });
    });
}

}  // namespace ttcw
