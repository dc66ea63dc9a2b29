#include "exgrpo/report.hpp"

#include <json.hpp>
#include <sstream>

#include "exgrpo/error.hpp"
#include "exgrpo/oracle.hpp"

namespace exgrpo {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json to_object(const StepReport& r) {
  ordered_json j;
  j["format_version"] = kMetricsFormatVersion;
  j["step"] = r.step;
  j["pass_at_1"] = r.pass_at_1;
  j["buffer_size"] = r.buffer_size;
  j["retired_size"] = r.retired_size;
  j["mean_entropy"] = r.mean_entropy;
  j["objective_value"] = r.objective_value;
  j["n_experiential"] = r.n_experiential;
  j["gate_active"] = r.gate_active;
  j["suite_pass_at_1"] = r.suite_pass_at_1;
  j["on_policy_with_replacement"] = r.on_policy_with_replacement;
  return j;
}

std::string fmt_real(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

}  // namespace

std::string to_json_line(const StepReport& report) {
  return to_object(report).dump();
}

StepReport step_report_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.at("format_version").get<int>() != kMetricsFormatVersion) {
      throw Error("unsupported metrics format version");
    }
    StepReport r;
    r.step = j.at("step").get<std::uint64_t>();
    r.pass_at_1 = j.at("pass_at_1").get<double>();
    r.buffer_size = j.at("buffer_size").get<std::size_t>();
    r.retired_size = j.at("retired_size").get<std::size_t>();
    r.mean_entropy = j.at("mean_entropy").get<double>();
    r.objective_value = j.at("objective_value").get<double>();
    r.n_experiential = j.at("n_experiential").get<std::size_t>();
    r.gate_active = j.at("gate_active").get<bool>();
    r.suite_pass_at_1 = j.at("suite_pass_at_1").get<double>();
    r.on_policy_with_replacement = j.at("on_policy_with_replacement").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad metrics record: ") + e.what());
  }
}

std::string csv_header() {
  return "format_version,step,pass_at_1,buffer_size,retired_size,mean_entropy,"
         "objective_value,n_experiential,gate_active,suite_pass_at_1,"
         "on_policy_with_replacement";
}

std::string to_csv_row(const StepReport& r) {
  std::ostringstream out;
  out << kMetricsFormatVersion << ',' << r.step << ',' << fmt_real(r.pass_at_1) << ','
      << r.buffer_size << ',' << r.retired_size << ',' << fmt_real(r.mean_entropy) << ','
      << fmt_real(r.objective_value) << ',' << r.n_experiential << ','
      << (r.gate_active ? "true" : "false") << ',' << fmt_real(r.suite_pass_at_1) << ','
      << (r.on_policy_with_replacement ? "true" : "false");
  return out.str();
}

namespace oracle {

std::string to_json(const UnbiasednessReport& r) {
  ordered_json j;
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  j["abs_diff"] = r.abs_diff;
  j["pass"] = r.pass;
  return j.dump();
}

std::string to_json(const MonteCarloReport& r) {
  ordered_json j;
  j["estimate"] = r.estimate;
  j["exact"] = r.exact;
  j["std_error"] = r.std_error;
  j["z_score"] = r.z_score;
  j["pass"] = r.pass;
  return j.dump();
}

std::string to_json(const VarianceReport& r) {
  ordered_json j;
  j["empirical_var"] = r.empirical_var;
  j["var_std_error"] = r.var_std_error;
  j["bound_A_prime"] = r.bound_A_prime;
  j["bound_B_prime"] = r.bound_B_prime;
  j["M"] = r.M;
  j["E_U2"] = r.E_U2;
  j["pass_A"] = r.pass_A;
  if (r.pass_B) {
    j["pass_B"] = *r.pass_B;
  } else {
    j["pass_B"] = nullptr;
  }
  j["regime"] = r.regime == oracle::VarianceRegime::kIndependent ? "independent"
                                                                 : "group_mean";
  return j.dump();
}

}  // namespace oracle

}  // namespace exgrpo
