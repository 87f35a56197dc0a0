// Kernel commands: the only way state changes. Each command serializes as
// {"type": "...", ...} inside an event-log line.

#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "marketkernel/assets.hpp"
#include "marketkernel/core.hpp"
#include "marketkernel/taskflow.hpp"

namespace mk::cmd {

struct RegisterParticipant {
    ParticipantId id;
    ParticipantKind kind = ParticipantKind::agent;
    Credits endowment;
};

struct PublishTask {
    std::string intent;
    Credits bounty;
    std::optional<TaskId> parent;
};

struct ClaimTask {
    TaskId task;
};

struct Decompose {
    TaskId task;
    std::vector<Subplan> subplans;
};

struct SubmitDeliverable {
    TaskId task;
    std::string payload;
    std::optional<std::string> payload_uri;
    std::vector<AssetId> used_skills;
    std::vector<AssetId> consulted;
    std::vector<std::string> evidence;
};

struct Review {
    TaskId task;
    Verdict verdict = Verdict::reject;
    std::string feedback;
    bool final = false;
};

struct CancelTask {
    TaskId task;
};

struct ProposeAssets {
    TaskId task;
    std::vector<CandidateItem> items;
};

struct ValidateAsset {
    AssetId asset;
    std::vector<ValidatorSpec> validators;
};

struct AdmitAssets {
    TaskId task;
};

struct RecordInvocation {
    AssetId skill;
    TaskId task;
    bool success = true;
    std::uint64_t latency_ms = 0;
};

}  // namespace mk::cmd

namespace mk {

using Command = std::variant<cmd::RegisterParticipant, cmd::PublishTask, cmd::ClaimTask, cmd::Decompose,
                             cmd::SubmitDeliverable, cmd::Review, cmd::CancelTask, cmd::ProposeAssets,
                             cmd::ValidateAsset, cmd::AdmitAssets, cmd::RecordInvocation>;

std::string_view command_type(const Command& c);

/// Throws KernelError(MalformedCommand) on any schema violation.
Command command_from_json(const Json& j);
Json to_json(const Command& c);

}  // namespace mk
