#pragma once

// JSON forms of the data model, the newline-delimited transition format and
// policy snapshots.

#include "mompo/policies.hpp"
#include "mompo/types.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace mompo {

using Json = nlohmann::json;

Json to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json to_json(const Action& a);
Action action_from_json(const Json& j);

Json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const Json& j);

Json to_json(const Transition& t);
Transition transition_from_json(const Json& j);

Json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);

Json to_json(const PreferenceSpec& p);
PreferenceSpec preference_from_json(const Json& j);

/// One JSON object per line: the Transition fields plus an integer
/// "episode" that groups lines into trajectories.
void write_transitions(std::ostream& out, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_transitions(std::istream& in, double discount);

Json to_json(const Encoding& e);
Encoding encoding_from_json(const Json& j);

/// Snapshot: family tag, layer sizes, flat parameters and free-form
/// metadata (environment, discount, ...).
Json policy_snapshot(const Policy& policy, const Json& metadata = Json::object());
Policy policy_from_snapshot(const Json& snapshot);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace mompo
