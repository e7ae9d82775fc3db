#include "rpm/tasks.hpp"

namespace rpm {

const std::vector<std::string>& movie_tag_classes() {
  static const std::vector<std::string> tags = {
      "sci-fi",      "based on a book", "comedy",     "action",           "twist ending",
      "dystopia",    "dark comedy",     "classic",    "psychology",       "fantasy",
      "romance",     "thought-provoking", "social commentary", "violence", "true story"};
  return tags;
}

std::vector<std::string> builtin_task_ids() { return {"lamp2", "lamp3", "lamp5", "goqa"}; }

std::optional<TaskProfile> builtin_task(const std::string& task_id) {
  TaskProfile t;
  t.task_id = task_id;
  if (task_id == "lamp2") {
    t.description = "Predict the single tag the user assigned to a movie from its description.";
    t.output_mode = OutputMode::classification;
    t.class_space = movie_tag_classes();
    t.metric_ids = {"accuracy", "macro_f1"};
    t.prompt_binding_keys = {"query", "response"};
    t.task_name = "movie tagging";
    t.input_name = "Movie Description";
    t.output_name = "movie tag";
    t.answer_field = "predicted_tag";
    return t;
  }
  if (task_id == "lamp3") {
    t.description = "Predict the 1-5 star rating the user gave a product from their review text.";
    t.output_mode = OutputMode::regression_label;
    t.class_space = std::vector<std::string>{"1", "2", "3", "4", "5"};
    t.metric_ids = {"mae", "rmse"};
    t.prompt_binding_keys = {"query", "response"};
    t.task_name = "product rating prediction";
    t.input_name = "Review";
    t.output_name = "rating";
    t.answer_field = "predicted_rating";
    return t;
  }
  if (task_id == "lamp5") {
    t.description = "Generate the title the author would give a paper from its abstract.";
    t.output_mode = OutputMode::free_text;
    t.metric_ids = {"rouge1", "rougeL"};
    t.prompt_binding_keys = {"abstract", "title"};
    t.task_name = "scholarly title generation";
    t.input_name = "Abstract";
    t.output_name = "title";
    t.answer_field = "predicted_title";
    return t;
  }
  if (task_id == "goqa") {
    // Options differ per question, so answers are option letters and factor
    // statistics use the influence judgments instead of letter propensities.
    t.description =
        "Predict the answer option most likely selected by the given population group for a survey question.";
    t.output_mode = OutputMode::classification;
    t.class_space = std::vector<std::string>{"A", "B", "C", "D", "E", "F", "G", "H", "I", "J"};
    t.metric_ids = {"accuracy"};
    t.prompt_binding_keys = {"query", "response"};
    t.task_name = "opinion question answering";
    t.input_name = "Question";
    t.output_name = "answer option";
    t.answer_field = "predicted_answer";
    t.stats_kind = StatsKind::open_ended;
    return t;
  }
  return std::nullopt;
}

}  // namespace rpm
