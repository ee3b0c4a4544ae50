// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/templates.hpp"

#include <fstream>
#include <sstream>

#include "kdiag/errors.hpp"
#include "kdiag/text.hpp"

namespace kdiag::templates {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot read template file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

std::string render(const std::string& tmpl,
                   const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      size_t close = tmpl.find('}', i + 1);
      if (close != std::string::npos) {
        std::string name = tmpl.substr(i + 1, close - i - 1);
        auto it = values.find(name);
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  return out;
}

std::string render_options(const std::vector<std::string>& options) {
  if (options.size() > 26) throw_invalid("too many options (max 26)");
  std::string out;
  for (size_t i = 0; i < options.size(); ++i) {
    if (i) out += '\n';
    out += text::option_letter(static_cast<int>(i));
    out += ' ';
    out += options[i];
  }
  return out;
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw_config("templates directory not found: " + dir.string());
  }
  TemplateSet set;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    const std::string prefix = "score_";
    const std::string prior_suffix = "_prior.txt";
    if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() + prior_suffix.size() &&
        name.compare(name.size() - prior_suffix.size(), prior_suffix.size(),
                     prior_suffix) == 0) {
      std::string id =
          name.substr(prefix.size(), name.size() - prefix.size() - prior_suffix.size());
      auto posterior_path = dir / ("score_" + id + "_posterior.txt");
      if (!std::filesystem::exists(posterior_path)) {
        throw_config("score template '" + id + "' lacks a posterior file");
      }
      set.add_score_template(
          id, {read_text(entry.path()), read_text(posterior_path)});
    }
  }
  auto reasoning = dir / "synth_reasoning.txt";
  auto math = dir / "synth_math.txt";
  auto preprocess = dir / "preprocess_math.txt";
  if (std::filesystem::exists(reasoning)) set.synth_reasoning_ = read_text(reasoning);
  if (std::filesystem::exists(math)) set.synth_math_ = read_text(math);
  if (std::filesystem::exists(preprocess)) set.preprocess_math_ = read_text(preprocess);
  return set;
}

void TemplateSet::add_score_template(const std::string& id, PromptTemplate tmpl) {
  if (!text::contains(tmpl.prior, "{question}") ||
      !text::contains(tmpl.prior, "{options}")) {
    throw_config("prior template '" + id + "' must use {question} and {options}");
  }
  if (text::contains(tmpl.prior, "{knowledge}")) {
    throw_config("prior template '" + id + "' must not use {knowledge}");
  }
  if (!text::contains(tmpl.posterior, "{question}") ||
      !text::contains(tmpl.posterior, "{options}") ||
      !text::contains(tmpl.posterior, "{knowledge}")) {
    throw_config("posterior template '" + id +
                 "' must use {question}, {options}, and {knowledge}");
  }
  score_[id] = std::move(tmpl);
}

bool TemplateSet::has_score_template(const std::string& id) const {
  return score_.count(id) != 0;
}

std::vector<std::string> TemplateSet::score_template_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : score_) ids.push_back(id);
  return ids;
}

std::string TemplateSet::render_score(const std::string& id, const std::string& question,
                                      const std::vector<std::string>& options,
                                      const std::optional<std::string>& knowledge) const {
  auto it = score_.find(id);
  if (it == score_.end()) throw_invalid("unknown template: " + id);
  std::map<std::string, std::string> values = {
      {"question", question}, {"options", render_options(options)}};
  if (knowledge) {
    values["knowledge"] = *knowledge;
    return render(it->second.posterior, values);
  }
  return render(it->second.prior, values);
}

const std::string& TemplateSet::synth_reasoning() const {
  if (synth_reasoning_.empty()) throw_invalid("unknown template: synth_reasoning");
  return synth_reasoning_;
}

const std::string& TemplateSet::synth_math() const {
  if (synth_math_.empty()) throw_invalid("unknown template: synth_math");
  return synth_math_;
}

const std::string& TemplateSet::preprocess_math() const {
  if (preprocess_math_.empty()) throw_invalid("unknown template: preprocess_math");
  return preprocess_math_;
}

}  // namespace kdiag::templates
