#include "rndiff/csv.hpp"
#include "rndiff/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace rndiff;

namespace {

void usage(std::ostream& os) {
  os << "usage: rndiff <command> [options]\n"
     << "\n"
     << "commands:\n"
     << "  generate                  write the synthetic cohort described by the config\n"
     << "  run                       execute the configured arms end to end\n"
     << "  explain <ckpt> <sample>   attention heatmap + mask fraction for one sample\n"
     << "  stats <csv>               hypothesis tests on a standalone CSV table\n"
     << "\n"
     << "options:\n"
     << "  --config PATH    JSON run configuration (built-in defaults when omitted)\n"
     << "  --seed N         override the master seed; generate also reseeds the phantom\n"
     << "  --arms LIST      comma-separated arm subset, e.g. ssl_vit,scratch_vit\n"
     << "  --out DIR        override the output directory\n"
     << "  --parallel-folds request fold-level parallelism (trainers are\n"
     << "                   deterministic and currently decline it)\n"
     << "  -h, --help       show this message\n"
     << "\n"
     << "exit codes: 0 success, 2 configuration error, 3 run or arm failure\n";
}

struct Options {
  std::string config_path;
  std::string seed_text;
  std::string arms_csv;
  bool arms_given = false;
  std::string out_dir;
  bool parallel_folds = false;
  bool help = false;
  std::vector<std::string> positional;
};

Options parse_options(int argc, char** argv) {
  Options opt;
  const auto value = [&](int& i, const char* flag) -> std::string {
    if (i + 1 >= argc)
      throw std::invalid_argument(std::string("missing value for ") + flag);
    return argv[++i];
  };
  for (int i = 2; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config") {
      opt.config_path = value(i, "--config");
    } else if (a == "--seed") {
      opt.seed_text = value(i, "--seed");
    } else if (a == "--arms") {
      opt.arms_csv = value(i, "--arms");
      opt.arms_given = true;
    } else if (a == "--out") {
      opt.out_dir = value(i, "--out");
    } else if (a == "--parallel-folds") {
      opt.parallel_folds = true;
    } else if (a == "-h" || a == "--help") {
      opt.help = true;
    } else if (!a.empty() && a[0] == '-') {
      throw std::invalid_argument("unknown option \"" + a + "\"");
    } else {
      opt.positional.push_back(a);
    }
  }
  return opt;
}

uint64_t parse_seed(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("--seed expects a nonnegative integer, got \"" + s +
                                "\"");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw std::invalid_argument("--seed out of range: \"" + s + "\"");
  }
}

std::vector<std::string> split_arms(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int dispatch(int argc, char** argv) {
  if (argc < 2) {
    usage(std::cerr);
    return 2;
  }
  const std::string cmd = argv[1];
  if (cmd == "-h" || cmd == "--help") {
    usage(std::cout);
    return 0;
  }
  const Options opt = parse_options(argc, argv);
  if (opt.help) {
    usage(std::cout);
    return 0;
  }

  RunConfig cfg =
      opt.config_path.empty() ? default_run_config() : load_run_config(opt.config_path);
  if (!opt.seed_text.empty()) {
    cfg.seed = parse_seed(opt.seed_text);
    if (cmd == "generate") cfg.phantom.seed = cfg.seed;
  }
  if (opt.arms_given) cfg.arms = split_arms(opt.arms_csv);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  if (opt.parallel_folds)
    std::cerr << "note: the trainers are deterministic and run folds sequentially; "
                 "--parallel-folds has no effect\n";

  if (cmd == "generate") {
    cmd_generate(cfg);
    std::cout << "cohort: " << cfg.cohort_dir << "\n";
    return 0;
  }
  if (cmd == "run") {
    const EvalReport report = cmd_run(cfg);
    for (const ArmReport& a : report.arms) {
      if (a.ok)
        std::cout << a.arm << ": test_auc=" << format_fixed(a.test_auc, 3)
                  << " oof_auc=" << format_fixed(a.oof_auc, 3) << "\n";
      else
        std::cout << a.arm << ": FAILED (" << a.error << ")\n";
    }
    std::cout << "report: " << cfg.out_dir << "/report.json\n";
    return report.any_failure() ? 3 : 0;
  }
  if (cmd == "explain") {
    if (opt.positional.size() != 2)
      throw std::invalid_argument(
          "explain needs exactly <checkpoint-stem> <sample-id>");
    // Stems name checkpoints directly; bare ones also resolve under out_dir,
    // so `explain ssl_vit/fold0 <id>` works straight from a run.
    std::string stem = opt.positional[0];
    if (!std::filesystem::exists(stem + ".json")) {
      const std::string under_out =
          (std::filesystem::path(cfg.out_dir) / stem).string();
      if (std::filesystem::exists(under_out + ".json")) stem = under_out;
    }
    const ExplainResult res = cmd_explain(cfg, stem, opt.positional[1]);
    std::cout << "mask_attention_fraction " << format_g17(res.mask_fraction) << "\n"
              << "heatmap: " << res.nifti_path << "\n";
    return 0;
  }
  if (cmd == "stats") {
    if (opt.positional.size() != 1)
      throw std::invalid_argument("stats needs exactly one CSV path");
    for (const TestResult& t : cmd_stats(opt.positional[0]))
      std::cout << test_result_to_line(t) << "\n";
    return 0;
  }
  std::cerr << "unknown command \"" + cmd + "\"\n\n";
  usage(std::cerr);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
