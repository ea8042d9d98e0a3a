#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mbw/io.hpp"
#include "mbw/synth.hpp"

#ifndef MBW_CLI_PATH
#error "MBW_CLI_PATH must point at the mbw_cli binary"
#endif

using namespace mbw;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args)
{
    const std::string cmd = std::string("\"") + MBW_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path workdir()
{
    const auto d = fs::temp_directory_path() / "mbw_cli_test";
    fs::create_directories(d);
    return d;
}

std::map<std::string, double> read_overall(const fs::path& csv)
{
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    std::map<std::string, double> out;
    while (std::getline(in, line))
    {
        std::stringstream ss(line);
        std::string metric, it, view, value;
        std::getline(ss, metric, ',');
        std::getline(ss, it, ',');
        std::getline(ss, view, ',');
        std::getline(ss, value, ',');
        if (view == "-1")
            out[metric] = std::stod(value);
    }
    return out;
}

}  // namespace

TEST(Cli, UsageErrors)
{
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("run --no-such-flag"), 1);
    EXPECT_EQ(run("run --baseline bundle"), 1);
    EXPECT_EQ(run("synth"), 1);
    EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, RuntimeErrors)
{
    EXPECT_EQ(run("eval --annotations /nonexistent.jsonl --frames 10"), 2);
}

TEST(Cli, EvalOfGroundTruthIsPerfect)
{
    const auto dir = workdir();
    synth::SynthConfig c;
    c.num_frames = 20;
    c.seed = 3;
    const auto ds = synth::generate(c);
    io::save_dataset(ds, dir / "ds.json");
    std::vector<pipeline::FrameRecord> recs;
    for (int n = 0; n < ds.num_frames(); ++n)
        for (int v = 0; v < ds.num_views(); ++v)
        {
            pipeline::FrameRecord r;
            r.w_gt = ds.gt_2d[n][v];
            r.w_predictions = ds.gt_2d[n][v];
            r.s_pred = ds.gt_shapes[n];
            r.confidence = true;
            recs.push_back(r);
        }
    io::save_annotations(recs, dir / "gt.jsonl");
    ASSERT_EQ(run("eval --data \"" + (dir / "ds.json").string() + "\" --annotations \"" + (dir / "gt.jsonl").string() +
                  "\" --out \"" + (dir / "eval.csv").string() + "\""),
              0);
    const auto m = read_overall(dir / "eval.csv");
    EXPECT_DOUBLE_EQ(m.at("pck_auc"), 1.0);
    EXPECT_NEAR(m.at("pa_mpjpe"), 0.0, 1e-9);
}

TEST(Cli, RunWritesOutputs)
{
    const auto out = workdir() / "run";
    fs::remove_all(out);
    ASSERT_EQ(run("run --frames 40 --label-fraction 0.1 --iterations 1 --prior-steps 50 --out-dir \"" + out.string() +
                  "\""),
              0);
    for (const char* f : {"annotations.jsonl", "manifest.json", "report.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(io::load_annotations(out / "annotations.jsonl").size(), 80u);
}

TEST(Cli, SynthThenRunFromFile)
{
    const auto dir = workdir();
    const auto data = dir / "synth.json";
    ASSERT_EQ(run("synth --frames 30 --views 3 --seed 4 --out \"" + data.string() + "\""), 0);
    const auto ds = io::load_dataset(data);
    EXPECT_EQ(ds.num_views(), 3);
    const auto out = dir / "run_tk";
    ASSERT_EQ(run("run --data \"" + data.string() + "\" --label-fraction 0.1 --iterations 1 --baseline tk --out-dir \"" +
                  out.string() + "\""),
              0);
    EXPECT_EQ(io::load_annotations(out / "annotations.jsonl").size(), 90u);
}
