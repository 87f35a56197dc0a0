#include "marketkernel/core.hpp"

#include <array>
#include <cstdio>

#include <openssl/sha.h>

namespace mk {

void to_json(Json& j, const Credits& c) { j = c.value(); }

void from_json(const Json& j, Credits& c) {
    if (!is_non_negative_integer(j))
        throw KernelError(ErrorCode::MalformedCommand, "credit amount must be a non-negative integer");
    c = Credits{j.get<std::uint64_t>()};
}

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DuplicateParticipant: return "DuplicateParticipant";
        case ErrorCode::UnknownParticipant: return "UnknownParticipant";
        case ErrorCode::InvalidParticipantId: return "InvalidParticipantId";
        case ErrorCode::InsufficientCredits: return "InsufficientCredits";
        case ErrorCode::UnknownTask: return "UnknownTask";
        case ErrorCode::EscrowAlreadyExists: return "EscrowAlreadyExists";
        case ErrorCode::EscrowNotOpen: return "EscrowNotOpen";
        case ErrorCode::TaskNotTerminal: return "TaskNotTerminal";
        case ErrorCode::UnknownSkill: return "UnknownSkill";
        case ErrorCode::InvocationNotValidated: return "InvocationNotValidated";
        case ErrorCode::BudgetExceeded: return "BudgetExceeded";
        case ErrorCode::NotClaimant: return "NotClaimant";
        case ErrorCode::ParentNotClaimed: return "ParentNotClaimed";
        case ErrorCode::TaskNotClaimable: return "TaskNotClaimable";
        case ErrorCode::SelfClaim: return "SelfClaim";
        case ErrorCode::TaskNotClaimed: return "TaskNotClaimed";
        case ErrorCode::UnknownAssetId: return "UnknownAssetId";
        case ErrorCode::NotAuthorizedReviewer: return "NotAuthorizedReviewer";
        case ErrorCode::TaskNotInReview: return "TaskNotInReview";
        case ErrorCode::NotRequester: return "NotRequester";
        case ErrorCode::TaskNotCancellable: return "TaskNotCancellable";
        case ErrorCode::TaskNotAccepted: return "TaskNotAccepted";
        case ErrorCode::NotParticipant: return "NotParticipant";
        case ErrorCode::UnknownDependency: return "UnknownDependency";
        case ErrorCode::AssetNotCandidate: return "AssetNotCandidate";
        case ErrorCode::ValidatorUnavailable: return "ValidatorUnavailable";
        case ErrorCode::ValidationIncomplete: return "ValidationIncomplete";
        case ErrorCode::AssetNotAdmitted: return "AssetNotAdmitted";
        case ErrorCode::NotASkill: return "NotASkill";
        case ErrorCode::EmptyCandidateSet: return "EmptyCandidateSet";
        case ErrorCode::MalformedCommand: return "MalformedCommand";
        case ErrorCode::CorruptLog: return "CorruptLog";
        case ErrorCode::ScenarioParseError: return "ScenarioParseError";
        case ErrorCode::PolicyPreconditionViolation: return "PolicyPreconditionViolation";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::BindFailure: return "BindFailure";
        case ErrorCode::DataDirLocked: return "DataDirLocked";
        case ErrorCode::Unauthorized: return "Unauthorized";
        case ErrorCode::NotFound: return "NotFound";
    }
    return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> md{};
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md.data());
    std::string out;
    out.reserve(md.size() * 2);
    char buf[3];
    for (unsigned char b : md) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        out += buf;
    }
    return out;
}

}  // namespace mk
