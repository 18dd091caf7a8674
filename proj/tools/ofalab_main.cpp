#include <cstdio>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "ofalab/errors.hpp"
#include "ofalab/harness.hpp"

namespace {

void print_usage() {
  std::printf(
      "ofalab %s — elastic supernet training lab\n"
      "\n"
      "usage: ofalab <command> [flags] [key.path=value ...]\n"
      "\n"
      "commands:\n"
      "  train            train a supernet under a sampling scheme\n"
      "                     --config FILE  --data-root DIR  --resume\n"
      "  eval             MFLOP-binned population evaluation of a checkpoint\n"
      "                     --run DIR | (--checkpoint FILE --dataset NAME)\n"
      "                     --data-root DIR  --out DIR\n"
      "  compare          side-by-side accuracy/compute tables for run dirs\n"
      "                     ofalab compare RUN_DIR RUN_DIR... [--out DIR]\n"
      "  flops            exact MFLOPs of a subnet config\n"
      "                     --config FILE | [--arch ID] [--preset min|middle|max]\n"
      "  population-size  search-space cardinality (exact, decimal)\n"
      "                     [--arch ID]\n"
      "  schemes          list the available training methods\n"
      "\n"
      "Dotted overrides patch the experiment config, e.g. train.epochs=5\n"
      "method=OFA_PS eval.n_per_bin=4. Dataset files are read from\n"
      "--data-root, else $%s, else ./datasets.\n",
      ofalab::kVersion, ofalab::kDataRootEnv);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Activation tensors are tens of MB; keep them on the reusable heap instead
  // of letting glibc hand each one to mmap (which re-faults the pages every
  // allocation and dominates layer cost).
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
  if (argc < 2 || std::strcmp(argv[1], "--help") == 0 || std::strcmp(argv[1], "help") == 0) {
    print_usage();
    return argc < 2 ? 1 : 0;
  }
  const std::string cmd = argv[1];
  const std::vector<std::string> args(argv + 2, argv + argc);
  try {
    if (cmd == "train") return ofalab::cmd_train(args);
    if (cmd == "eval") return ofalab::cmd_eval(args);
    if (cmd == "compare") return ofalab::cmd_compare(args);
    if (cmd == "flops") return ofalab::cmd_flops(args);
    if (cmd == "population-size") return ofalab::cmd_population_size(args);
    if (cmd == "schemes") return ofalab::cmd_schemes(args);
    std::fprintf(stderr, "ofalab: unknown command '%s'\n\n", cmd.c_str());
    print_usage();
    return 1;
  } catch (const ofalab::ConfigError& e) {
    std::fprintf(stderr, "ofalab: config error: %s\n", e.what());
    return 1;
  } catch (const ofalab::DataFormatError& e) {
    std::fprintf(stderr, "ofalab: data error: %s\n", e.what());
    return 2;
  } catch (const ofalab::NumericError& e) {
    std::fprintf(stderr, "ofalab: numeric error: %s\n", e.what());
    return 3;
  } catch (const ofalab::SamplingError& e) {
    std::fprintf(stderr, "ofalab: sampling error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ofalab: %s\n", e.what());
    return 1;
  }
}
