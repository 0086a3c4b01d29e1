#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medvl/grounding.hpp"

namespace medvl {

enum class TaskIdentifier { caption, vqa, detection, refer, grounding, identify };

inline constexpr std::array<TaskIdentifier, 6> kAllTasks = {
    TaskIdentifier::caption, TaskIdentifier::vqa,       TaskIdentifier::detection,
    TaskIdentifier::refer,   TaskIdentifier::grounding, TaskIdentifier::identify};

std::string_view task_name(TaskIdentifier task);

/// Throws UnknownTaskError for anything outside the six identifiers.
TaskIdentifier parse_task(std::string_view name);

/// True for tasks whose answers carry serialized boxes.
bool is_grounded_task(TaskIdentifier task);

struct PromptSpec {
  TaskIdentifier task = TaskIdentifier::caption;
  std::string instruction;
  int image_slot_count = 1;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct RenderedPrompt {
  std::string text;
  CharRange image_slot_range;  // covers "<ImageFeature>"
};

inline constexpr std::string_view kImageFeatureToken = "<ImageFeature>";

/// `[INST] <Img><ImageFeature></Img> [task] instruction [/INST]`.
/// Throws SchemaError if the instruction is empty, contains a reserved
/// template atom, or the slot count is not 1.
RenderedPrompt render_prompt(const PromptSpec& spec);

/// Inverse of render_prompt. Throws TemplateMismatchError (with the offset of
/// the first divergence) or UnknownTaskError.
PromptSpec parse_rendered(std::string_view text);

/// Record fields a target may be built from. Which ones are required depends
/// on the task; see build_target.
struct TargetFields {
  std::optional<std::string> text;   // caption / vqa answer / identify answer / grounding caption
  std::optional<std::string> label;  // detection phrase
  std::vector<NormalizedBox> boxes;  // detection / refer
  std::vector<std::pair<std::string, NormalizedBox>> grounded;  // grounding: phrase -> box
};

/// detection: `label box box ...`; refer: the single box; caption, vqa and
/// identify: text verbatim; grounding: text with each box inserted right
/// after the first occurrence of its phrase. Throws SchemaError on missing
/// or invalid fields.
std::string build_target(TaskIdentifier task, const TargetFields& fields);

}  // namespace medvl
