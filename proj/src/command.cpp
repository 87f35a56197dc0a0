#include "marketkernel/command.hpp"

namespace mk {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const Json& field(const Json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw KernelError(ErrorCode::MalformedCommand, std::string("missing field ") + name);
    return *it;
}

std::string str(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_string()) throw KernelError(ErrorCode::MalformedCommand, std::string(name) + " must be a string");
    return v.get<std::string>();
}

std::string str_or(const Json& j, const char* name, std::string fallback) {
    return j.contains(name) ? str(j, name) : fallback;
}

bool flag_or(const Json& j, const char* name, bool fallback) {
    if (!j.contains(name)) return fallback;
    if (!j[name].is_boolean()) throw KernelError(ErrorCode::MalformedCommand, std::string(name) + " must be a boolean");
    return j[name].get<bool>();
}

template <class T>
std::vector<T> id_list(const Json& j, const char* name) {
    std::vector<T> out;
    if (!j.contains(name)) return out;
    if (!j[name].is_array()) throw KernelError(ErrorCode::MalformedCommand, std::string(name) + " must be an array");
    for (const auto& v : j[name]) {
        if (!v.is_string()) throw KernelError(ErrorCode::MalformedCommand, std::string(name) + " entries must be strings");
        out.emplace_back(v.get<std::string>());
    }
    return out;
}

Command parse(const Json& j) {
    const std::string type = str(j, "type");
    if (type == "register_participant")
        return cmd::RegisterParticipant{ParticipantId{str(j, "id")},
                                        participant_kind_from_string(str_or(j, "kind", "agent")),
                                        j.contains("endowment") ? j["endowment"].get<Credits>() : Credits{0}};
    if (type == "publish_task") {
        cmd::PublishTask c{str(j, "intent"), field(j, "bounty").get<Credits>(), std::nullopt};
        if (j.contains("parent") && !j["parent"].is_null()) c.parent = TaskId{str(j, "parent")};
        return c;
    }
    if (type == "claim_task") return cmd::ClaimTask{TaskId{str(j, "task")}};
    if (type == "decompose") {
        cmd::Decompose c{TaskId{str(j, "task")}, {}};
        const Json& plans = field(j, "subplans");
        if (!plans.is_array()) throw KernelError(ErrorCode::MalformedCommand, "subplans must be an array");
        for (const auto& p : plans) c.subplans.push_back(Subplan{str(p, "intent"), field(p, "bounty").get<Credits>()});
        return c;
    }
    if (type == "submit_deliverable") {
        cmd::SubmitDeliverable c;
        c.task = TaskId{str(j, "task")};
        c.payload = str_or(j, "payload", "");
        if (j.contains("payload_uri") && !j["payload_uri"].is_null()) c.payload_uri = str(j, "payload_uri");
        c.used_skills = id_list<AssetId>(j, "used_skills");
        c.consulted = id_list<AssetId>(j, "consulted");
        c.evidence = id_list<std::string>(j, "evidence");
        return c;
    }
    if (type == "review")
        return cmd::Review{TaskId{str(j, "task")}, verdict_from_string(str(j, "verdict")),
                           str_or(j, "feedback", ""), flag_or(j, "final", false)};
    if (type == "cancel_task") return cmd::CancelTask{TaskId{str(j, "task")}};
    if (type == "propose_assets") {
        cmd::ProposeAssets c{TaskId{str(j, "task")}, {}};
        const Json& items = field(j, "items");
        if (!items.is_array()) throw KernelError(ErrorCode::MalformedCommand, "items must be an array");
        for (const auto& it : items) c.items.push_back(candidate_item_from_json(it));
        return c;
    }
    if (type == "validate_asset") {
        cmd::ValidateAsset c{AssetId{str(j, "asset")}, {}};
        for (const auto& v : j.value("validators", Json::array())) {
            if (v.is_string()) c.validators.push_back(ValidatorSpec{v.get<std::string>(), Json::object()});
            else c.validators.push_back(ValidatorSpec{str(v, "name"), v});
        }
        return c;
    }
    if (type == "admit_assets") return cmd::AdmitAssets{TaskId{str(j, "task")}};
    if (type == "record_invocation") {
        const Json& lat = field(j, "latency_ms");
        if (!is_non_negative_integer(lat))
            throw KernelError(ErrorCode::MalformedCommand, "latency_ms must be a non-negative integer");
        return cmd::RecordInvocation{AssetId{str(j, "skill")}, TaskId{str(j, "task")},
                                     flag_or(j, "success", true), lat.get<std::uint64_t>()};
    }
    throw KernelError(ErrorCode::MalformedCommand, "unknown command type: " + type);
}

}  // namespace

std::string_view command_type(const Command& c) {
    return std::visit(overloaded{
                          [](const cmd::RegisterParticipant&) { return "register_participant"; },
                          [](const cmd::PublishTask&) { return "publish_task"; },
                          [](const cmd::ClaimTask&) { return "claim_task"; },
                          [](const cmd::Decompose&) { return "decompose"; },
                          [](const cmd::SubmitDeliverable&) { return "submit_deliverable"; },
                          [](const cmd::Review&) { return "review"; },
                          [](const cmd::CancelTask&) { return "cancel_task"; },
                          [](const cmd::ProposeAssets&) { return "propose_assets"; },
                          [](const cmd::ValidateAsset&) { return "validate_asset"; },
                          [](const cmd::AdmitAssets&) { return "admit_assets"; },
                          [](const cmd::RecordInvocation&) { return "record_invocation"; },
                      },
                      c);
}

Command command_from_json(const Json& j) {
    if (!j.is_object()) throw KernelError(ErrorCode::MalformedCommand, "command must be a JSON object");
    try {
        return parse(j);
    } catch (const KernelError&) {
        throw;
    } catch (const std::exception& e) {
        throw KernelError(ErrorCode::MalformedCommand, e.what());
    }
}

Json to_json(const Command& c) {
    Json j{{"type", command_type(c)}};
    std::visit(overloaded{
                   [&](const cmd::RegisterParticipant& r) {
                       j["id"] = r.id;
                       j["kind"] = to_string(r.kind);
                       j["endowment"] = r.endowment;
                   },
                   [&](const cmd::PublishTask& p) {
                       j["intent"] = p.intent;
                       j["bounty"] = p.bounty;
                       if (p.parent) j["parent"] = *p.parent;
                   },
                   [&](const cmd::ClaimTask& t) { j["task"] = t.task; },
                   [&](const cmd::Decompose& d) {
                       j["task"] = d.task;
                       Json plans = Json::array();
                       for (const auto& s : d.subplans) plans.push_back(Json{{"intent", s.intent}, {"bounty", s.bounty}});
                       j["subplans"] = plans;
                   },
                   [&](const cmd::SubmitDeliverable& s) {
                       j["task"] = s.task;
                       j["payload"] = s.payload;
                       if (s.payload_uri) j["payload_uri"] = *s.payload_uri;
                       j["used_skills"] = s.used_skills;
                       j["consulted"] = s.consulted;
                       j["evidence"] = s.evidence;
                   },
                   [&](const cmd::Review& r) {
                       j["task"] = r.task;
                       j["verdict"] = to_string(r.verdict);
                       j["feedback"] = r.feedback;
                       j["final"] = r.final;
                   },
                   [&](const cmd::CancelTask& t) { j["task"] = t.task; },
                   [&](const cmd::ProposeAssets& p) {
                       j["task"] = p.task;
                       Json items = Json::array();
                       for (const auto& it : p.items) items.push_back(to_json(it));
                       j["items"] = items;
                   },
                   [&](const cmd::ValidateAsset& v) {
                       j["asset"] = v.asset;
                       Json specs = Json::array();
                       for (const auto& s : v.validators) {
                           Json spec = s.params.is_object() ? s.params : Json::object();
                           spec["name"] = s.name;
                           specs.push_back(spec);
                       }
                       j["validators"] = specs;
                   },
                   [&](const cmd::AdmitAssets& a) { j["task"] = a.task; },
                   [&](const cmd::RecordInvocation& r) {
                       j["skill"] = r.skill;
                       j["task"] = r.task;
                       j["success"] = r.success;
                       j["latency_ms"] = r.latency_ms;
                   },
               },
               c);
    return j;
}

}  // namespace mk
