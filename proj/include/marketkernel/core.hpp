// Shared vocabulary types: identifiers, credit amounts, kernel errors.

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mk {

// Insertion-ordered so that serialized events and state are byte-stable.
using Json = nlohmann::ordered_json;

template <class Tag>
struct Id {
    std::string value;

    Id() = default;
    explicit Id(std::string v) : value(std::move(v)) {}

    bool empty() const { return value.empty(); }
    auto operator<=>(const Id&) const = default;
};

struct ParticipantTag {};
struct TaskTag {};
struct AssetTag {};
struct EscrowTag {};

using ParticipantId = Id<ParticipantTag>;
using TaskId = Id<TaskTag>;
using AssetId = Id<AssetTag>;
using EscrowId = Id<EscrowTag>;

template <class Tag>
void to_json(Json& j, const Id<Tag>& id) { j = id.value; }

template <class Tag>
void from_json(const Json& j, Id<Tag>& id) { id.value = j.get<std::string>(); }

/// Whole credits. Arithmetic that would leave the non-negative range throws
/// std::domain_error; callers check balances first and report
/// InsufficientCredits, so a throw here means a broken ledger invariant.
class Credits {
public:
    constexpr Credits() = default;
    constexpr explicit Credits(std::uint64_t v) : value_(v) {}

    constexpr std::uint64_t value() const { return value_; }

    friend Credits operator+(Credits a, Credits b) {
        if (a.value_ > std::numeric_limits<std::uint64_t>::max() - b.value_)
            throw std::domain_error("credit overflow");
        return Credits{a.value_ + b.value_};
    }
    friend Credits operator-(Credits a, Credits b) {
        if (b.value_ > a.value_) throw std::domain_error("negative credit amount");
        return Credits{a.value_ - b.value_};
    }
    Credits& operator+=(Credits o) { return *this = *this + o; }
    Credits& operator-=(Credits o) { return *this = *this - o; }

    constexpr auto operator<=>(const Credits&) const = default;

private:
    std::uint64_t value_ = 0;
};

void to_json(Json& j, const Credits& c);
void from_json(const Json& j, Credits& c);

/// True for integers >= 0, whether the JSON value is stored signed or unsigned.
inline bool is_non_negative_integer(const Json& j) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

enum class ErrorCode {
    DuplicateParticipant,
    UnknownParticipant,
    InvalidParticipantId,
    InsufficientCredits,
    UnknownTask,
    EscrowAlreadyExists,
    EscrowNotOpen,
    TaskNotTerminal,
    UnknownSkill,
    InvocationNotValidated,
    BudgetExceeded,
    NotClaimant,
    ParentNotClaimed,
    TaskNotClaimable,
    SelfClaim,
    TaskNotClaimed,
    UnknownAssetId,
    NotAuthorizedReviewer,
    TaskNotInReview,
    NotRequester,
    TaskNotCancellable,
    TaskNotAccepted,
    NotParticipant,
    UnknownDependency,
    AssetNotCandidate,
    ValidatorUnavailable,
    ValidationIncomplete,
    AssetNotAdmitted,
    NotASkill,
    EmptyCandidateSet,
    MalformedCommand,
    CorruptLog,
    ScenarioParseError,
    PolicyPreconditionViolation,
    IoFailure,
    BindFailure,
    DataDirLocked,
    Unauthorized,
    NotFound,
};

std::string_view to_string(ErrorCode code);

class KernelError : public std::runtime_error {
public:
    KernelError(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}
    explicit KernelError(ErrorCode code)
        : std::runtime_error(std::string(to_string(code))), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace mk

template <class Tag>
struct std::hash<mk::Id<Tag>> {
    std::size_t operator()(const mk::Id<Tag>& id) const noexcept {
        return std::hash<std::string>{}(id.value);
    }
};
