// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kdiag::templates {

// A scoring/generation template pair. The prior text must reference
// {question} and {options} and must not reference {knowledge}; the posterior
// text must reference all three. Enforced at registration.
struct PromptTemplate {
  std::string prior;
  std::string posterior;
};

// Single-pass placeholder substitution: {name} tokens are replaced from the
// map, unknown tokens are left verbatim.
std::string render(const std::string& tmpl,
                   const std::map<std::string, std::string>& values);

// "(A) first\n(B) second" rendering used in every prompt.
std::string render_options(const std::vector<std::string>& options);

class TemplateSet {
 public:
  // Loads score_<id>_prior.txt / score_<id>_posterior.txt pairs plus
  // synth_reasoning.txt, synth_math.txt, and preprocess_math.txt.
  static TemplateSet load_dir(const std::filesystem::path& dir);

  void add_score_template(const std::string& id, PromptTemplate tmpl);
  void set_synth_reasoning(std::string tmpl) { synth_reasoning_ = std::move(tmpl); }
  void set_synth_math(std::string tmpl) { synth_math_ = std::move(tmpl); }
  void set_preprocess_math(std::string tmpl) { preprocess_math_ = std::move(tmpl); }

  bool has_score_template(const std::string& id) const;
  std::vector<std::string> score_template_ids() const;

  // Throws "unknown template" for unregistered ids.
  std::string render_score(const std::string& id, const std::string& question,
                           const std::vector<std::string>& options,
                           const std::optional<std::string>& knowledge) const;

  const std::string& synth_reasoning() const;
  const std::string& synth_math() const;
  const std::string& preprocess_math() const;

 private:
  std::map<std::string, PromptTemplate> score_;
  std::string synth_reasoning_;
  std::string synth_math_;
  std::string preprocess_math_;
};

}  // namespace kdiag::templates
