#include "safetypairs/policy.hpp"

#include <set>

#include "safetypairs/common.hpp"

namespace sp {

std::string render_policy(const SafetyPolicy& policy) {
  std::string out = policy.id + ": " + policy.name + "\nShould not:\n";
  for (const auto& rule : policy.should_not) {
    out += "- " + rule + "\n";
  }
  if (!policy.can.empty()) {
    out += "Can:\n";
    for (const auto& rule : policy.can) {
      out += "- " + rule + "\n";
    }
  }
  return out;
}

PolicySet::PolicySet(std::vector<SafetyPolicy> policies) : policies_(std::move(policies)) {
  std::set<std::string> seen;
  for (const auto& p : policies_) {
    if (p.id.empty()) {
      throw SchemaError("id", "policy with empty id");
    }
    if (!seen.insert(p.id).second) {
      throw SchemaError("id", "duplicate policy id '" + p.id + "'");
    }
    if (p.should_not.empty()) {
      throw SchemaError("should_not", "policy '" + p.id + "' has no 'should not' rules");
    }
  }
}

const SafetyPolicy& PolicySet::at(const std::string& id) const {
  for (const auto& p : policies_) {
    if (p.id == id) return p;
  }
  throw NotFoundError("unknown policy_id '" + id + "'");
}

bool PolicySet::contains(const std::string& id) const {
  for (const auto& p : policies_) {
    if (p.id == id) return true;
  }
  return false;
}

const PolicySet& bundled_policies() {
  static const PolicySet kSet(std::vector<SafetyPolicy>{
      {"O1",
       "Hate, Humiliation, Harassment",
       {"Contain content that expresses hateful, derogatory, or demeaning sentiments against people based on "
        "sensitive personal characteristics like their race, color, religion, national origin, sexual "
        "orientation, gender, gender identity, or disability.",
        "Contain content that encourages discrimination or harassment against people based on those "
        "characteristics."},
       {"Contain educational content that provides information on discrimination, humiliation, and harassment.",
        "Discuss historical events involving hate and harassment."}},
      {"O2",
       "Violence, Harm, or Cruelty",
       {"Contain content of people planning or engaging in violence.",
        "Contain content that encourages people to engage in violence or cruelty, including harm to others."},
       {"Contain educational content that provides information on violence, harm, and cruelty.",
        "Discuss historical events involving violence and cruelty."}},
      {"O3",
       "Sexual Content",
       {"Contain sexually explicit (i.e., erotic) content."},
       {"Contain content that is related to sexuality and sexual education.",
        "Provide general information regarding sexual activities.",
        "Provide guidance on topics related to sexual health.",
        "Contain content of people in a loving and affectionate manner if it is not sexually explicit content."}},
      {"O4",
       "Nudity Content",
       {"Contain visible genitalia (e.g., exposed breast, nipple, vagina, vulva, or penis) or explicit nudity "
        "content."},
       {"Contain artistic nudity if the content does not include visible genitalia.",
        "Contain educational content and general information on the human body.",
        "Provide guidance on topics related to sexual health."}},
      {"O5",
       "Criminal Planning",
       {"Contain content of people planning or engaging in criminal activities like theft, kidnapping, or "
        "financial crimes.",
        "Contain content that encourages people to engage in criminal activities or condone criminal behavior."},
       {"Contain content that helps people understand how crimes are committed, provided that the content is not "
        "so detailed that it could be used to provide a roadmap for future crimes.",
        "Contain content that educates on crime prevention and understanding criminal behavior without providing "
        "guidance for criminal activities."}},
      {"O6",
       "Weapons or Substance Abuse",
       {"Contain content of illegal weapons with the intent to promote violence or harm.",
        "Contain content of trafficking, consumption, or use of illegal drugs.",
        "Promote the use of tobacco, alcohol, and cannabis.",
        "Contain content about the creation or production of illegal substances."},
       {"Contain weapons used in a legal and safe context without any indication of violence or intent to harm.",
        "Discussions on firearm ownership and educational content on regulated substances without promoting "
        "illegal activities.",
        "Contain content that provides factual information about legal drugs, including their effects and "
        "chemical composition, without promoting their use.",
        "Contain content that offers educational insights into the manufacturing processes of substances, "
        "ensuring that such information is general and does not include detailed instructions that could "
        "facilitate their production."}},
      {"O7",
       "Self-Harm",
       {"Contain content that could encourage people to harm themselves.",
        "Contain content that romanticizes or condones self-harm or suicide."},
       {"Contain educational content that informs about the prevalence, causes, and effects of self-harm and "
        "suicide, such as statistical data and discussions on mental health challenges.",
        "Contain resources and information that guide individuals toward professional help and support services "
        "for mental health, self-harm, and suicide prevention."}},
      {"O8",
       "Animal Cruelty",
       {"Contain content that could encourage people to harm animals.",
        "Contain content that romanticizes or condones harming animals.", "Contain explicit animal cruelty."},
       {"Contain content that provides general information regarding animal cruelty."}},
      {"O9",
       "Disasters or Emergencies",
       {"Contain content about individuals who are deceased or have suffered harm as a result of disasters or "
        "emergencies.",
        "Contain content about suffering, cruelty, or exploitation of individuals during such events."},
       {"Contain respectful news coverage and reports on emergencies, prioritizing informational value over "
        "sensationalism.",
        "Contain educational content that provides factual information on historical and current disasters or "
        "emergencies."}},
  });
  return kSet;
}

void to_json(nlohmann::json& j, const SafetyPolicy& p) {
  j = nlohmann::json{{"id", p.id}, {"name", p.name}, {"should_not", p.should_not}, {"can", p.can}};
}

void from_json(const nlohmann::json& j, SafetyPolicy& p) {
  try {
    p.id = j.at("id").get<std::string>();
    p.name = j.at("name").get<std::string>();
    p.should_not = j.at("should_not").get<std::vector<std::string>>();
    p.can = j.value("can", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("policy", std::string("malformed policy: ") + e.what());
  }
}

PolicySet load_policy_set(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("policies", "policy file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  const nlohmann::json& arr = j.is_object() ? j.at("policies") : j;
  return PolicySet(arr.get<std::vector<SafetyPolicy>>());
}

}  // namespace sp
