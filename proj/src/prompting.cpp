#include "medvl/prompting.hpp"

#include <algorithm>

#include "medvl/errors.hpp"

namespace medvl {

namespace {

constexpr std::string_view kPrefix = "[INST] <Img><ImageFeature></Img> [";
constexpr std::string_view kSuffix = " [/INST]";
constexpr std::array<std::string_view, 5> kReserved = {"[INST]", "[/INST]", "<Img>", "</Img>",
                                                       "<ImageFeature>"};

std::size_t first_divergence(std::string_view text, std::size_t offset, std::string_view expected) {
  std::size_t i = 0;
  while (i < expected.size() && offset + i < text.size() && text[offset + i] == expected[i]) ++i;
  return offset + i;
}

}  // namespace

std::string_view task_name(TaskIdentifier task) {
  switch (task) {
    case TaskIdentifier::caption: return "caption";
    case TaskIdentifier::vqa: return "vqa";
    case TaskIdentifier::detection: return "detection";
    case TaskIdentifier::refer: return "refer";
    case TaskIdentifier::grounding: return "grounding";
    case TaskIdentifier::identify: return "identify";
  }
  return "caption";
}

TaskIdentifier parse_task(std::string_view name) {
  for (TaskIdentifier t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw UnknownTaskError("unknown task identifier '" + std::string(name) + "'");
}

bool is_grounded_task(TaskIdentifier task) {
  return task == TaskIdentifier::detection || task == TaskIdentifier::refer ||
         task == TaskIdentifier::grounding;
}

RenderedPrompt render_prompt(const PromptSpec& spec) {
  if (spec.image_slot_count != 1) throw SchemaError("exactly one image slot is supported", 0, "image_slot_count");
  if (spec.instruction.empty()) throw SchemaError("instruction must be non-empty", 0, "instruction");
  for (std::string_view atom : kReserved) {
    if (spec.instruction.find(atom) != std::string::npos) {
      throw SchemaError("instruction contains reserved token " + std::string(atom), 0, "instruction");
    }
  }
  RenderedPrompt out;
  out.text.reserve(kPrefix.size() + spec.instruction.size() + 24);
  out.text += "[INST] <Img>";
  out.image_slot_range.begin = out.text.size();
  out.text += kImageFeatureToken;
  out.image_slot_range.end = out.text.size();
  out.text += "</Img> [";
  out.text += task_name(spec.task);
  out.text += "] ";
  out.text += spec.instruction;
  out.text += kSuffix;
  return out;
}

PromptSpec parse_rendered(std::string_view text) {
  if (const auto d = first_divergence(text, 0, kPrefix); d != kPrefix.size()) {
    throw TemplateMismatchError("expected prompt prefix", d);
  }
  const std::size_t name_begin = kPrefix.size();
  const std::size_t close = text.find(']', name_begin);
  if (close == std::string_view::npos) throw TemplateMismatchError("unterminated task identifier", text.size());
  const TaskIdentifier task = parse_task(text.substr(name_begin, close - name_begin));

  std::size_t pos = close + 1;
  if (pos >= text.size() || text[pos] != ' ') throw TemplateMismatchError("expected space after task identifier", pos);
  ++pos;
  if (text.size() < pos + kSuffix.size() || !text.ends_with(kSuffix)) {
    const std::size_t tail = text.size() >= kSuffix.size() ? text.size() - kSuffix.size() : 0;
    throw TemplateMismatchError("expected closing [/INST]",
                                first_divergence(text, std::max(tail, pos), kSuffix));
  }
  PromptSpec spec;
  spec.task = task;
  spec.instruction = std::string(text.substr(pos, text.size() - kSuffix.size() - pos));
  if (spec.instruction.empty()) throw TemplateMismatchError("empty instruction", pos);
  for (std::string_view atom : kReserved) {
    if (const auto at = spec.instruction.find(atom); at != std::string::npos) {
      throw TemplateMismatchError("reserved token inside instruction", pos + at);
    }
  }
  return spec;
}

std::string build_target(TaskIdentifier task, const TargetFields& fields) {
  auto check_box = [](const NormalizedBox& b) {
    if (!b.valid()) throw SchemaError("box outside [0,100] or inverted", 0, "boxes");
  };
  switch (task) {
    case TaskIdentifier::detection: {
      if (!fields.label || fields.label->empty()) throw SchemaError("detection target needs a label", 0, "label");
      if (fields.boxes.empty()) throw SchemaError("detection target needs at least one box", 0, "boxes");
      std::string out = *fields.label;
      for (const auto& b : fields.boxes) {
        check_box(b);
        out += ' ';
        out += serialize_box(b);
      }
      return out;
    }
    case TaskIdentifier::refer: {
      if (fields.boxes.size() != 1) throw SchemaError("refer target needs exactly one box", 0, "boxes");
      check_box(fields.boxes.front());
      return serialize_box(fields.boxes.front());
    }
    case TaskIdentifier::grounding: {
      if (!fields.text || fields.text->empty()) throw SchemaError("grounding target needs a caption", 0, "text");
      std::string out = *fields.text;
      std::size_t cursor = 0;
      for (const auto& [phrase, box] : fields.grounded) {
        check_box(box);
        if (phrase.empty()) throw SchemaError("grounded phrase must be non-empty", 0, "grounded");
        const std::size_t at = out.find(phrase, cursor);
        if (at == std::string::npos) {
          throw SchemaError("grounded phrase '" + phrase + "' not found in caption", 0, "grounded");
        }
        const std::string inserted = " " + serialize_box(box);
        out.insert(at + phrase.size(), inserted);
        cursor = at + phrase.size() + inserted.size();
      }
      return out;
    }
    case TaskIdentifier::caption:
    case TaskIdentifier::vqa:
    case TaskIdentifier::identify:
      if (!fields.text || fields.text->empty()) throw SchemaError("target text must be non-empty", 0, "text");
      return *fields.text;
  }
  throw UnknownTaskError("unknown task");
}

}  // namespace medvl
