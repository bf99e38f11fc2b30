#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "gsurf/pipeline.hpp"

using namespace gsurf;

namespace {

const fs::path kWork = fs::temp_directory_path() / "gsurf_cli_test";

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GSURF_CLI_PATH) + " " + args + " >> " +
                            (kWork / "cli.log").string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

void write_tiny_fixture() {
    fs::create_directories(kWork);
    std::ofstream spec(kWork / "scene.txt");
    spec << R"(frames = 3
dt = 0.01
bounds_lo = -0.12 -0.02 -0.12
bounds_hi = 0.12 0.3 0.12
width = 48
height = 48
camera_span_deg = 35
camera_distance = 0.9

[bubble]
position = -0.03 0.08 0.0
radius = 0.035
velocity = 0 0.3 0

[bubble]
position = 0.045 0.16 0.01
radius = 0.03
velocity = 0 0.3 0
)";
    spec.close();
    std::ofstream cfg(kWork / "config.txt");
    cfg << R"(iterations_frame0 = 40
iterations_frame = 20
iterations_stage2 = 20
init_candidates = 6000
init_surfels = 250
min_surfels = 80
densify_interval = 20
densify_until = 20
novel_view_count = 4
novel_view_increment_deg = 30
)";
}

}  // namespace

TEST_CASE("full pipeline emits every declared artifact") {
    fs::remove_all(kWork);
    write_tiny_fixture();
    const std::string D = (kWork / "data").string();

    REQUIRE(run_cli("--seed 5 gen-synthetic --spec " + (kWork / "scene.txt").string() + " --out " + D) == 0);
    REQUIRE(fs::exists(kWork / "data" / "cameras.txt"));
    REQUIRE(fs::exists(kWork / "data" / "views" / "cam0" / "frame_00003.png"));
    REQUIRE(fs::exists(kWork / "data" / "masks" / "cam2" / "frame_00001.png"));
    REQUIRE(fs::exists(kWork / "data" / "gt" / "points" / "frame_00002.bin"));
    REQUIRE(fs::exists(kWork / "data" / "gt" / "velocity.csv"));

    REQUIRE(run_cli("--seed 5 reconstruct --data " + D + " --views cam0,cam2 --config " +
                    (kWork / "config.txt").string() + " --out " + (kWork / "s1").string()) == 0);
    REQUIRE(fs::exists(kWork / "s1" / "checkpoint.bin"));
    REQUIRE(fs::exists(kWork / "s1" / "loss.csv"));

    REQUIRE(run_cli("render-orbit --checkpoint " + (kWork / "s1" / "checkpoint.bin").string() +
                    " --data " + D + " --views cam0,cam2 --config " + (kWork / "config.txt").string() +
                    " --out " + (kWork / "rough").string()) == 0);
    REQUIRE(fs::exists(kWork / "rough" / "manifest.txt"));
    REQUIRE(fs::exists(kWork / "rough" / "views" / "1" / "frame_00001.png"));
    REQUIRE(fs::exists(kWork / "rough" / "views" / "4" / "frame_00003.png"));

    REQUIRE(run_cli("refine --rough " + (kWork / "rough").string() + " --hook identity --out " +
                    (kWork / "refined").string()) == 0);
    // Identity hook: refined frames equal rough frames byte for byte.
    CHECK(slurp(kWork / "refined" / "views" / "2" / "frame_00002.png") ==
          slurp(kWork / "rough" / "views" / "2" / "frame_00002.png"));

    REQUIRE(run_cli("--seed 5 reconstruct-stage2 --checkpoint " +
                    (kWork / "s1" / "checkpoint.bin").string() + " --refined " +
                    (kWork / "refined").string() + " --data " + D + " --views cam0,cam2 --config " +
                    (kWork / "config.txt").string() + " --out " + (kWork / "s2").string()) == 0);
    REQUIRE(fs::exists(kWork / "s2" / "checkpoint.bin"));

    REQUIRE(run_cli("extract-mesh --checkpoint " + (kWork / "s1" / "checkpoint.bin").string() +
                    " --frame 1 --resolution 32 --out " + (kWork / "mesh.obj").string()) == 0);
    REQUIRE(fs::exists(kWork / "mesh.obj"));
    REQUIRE(run_cli("extract-mesh --checkpoint " + (kWork / "s1" / "checkpoint.bin").string() +
                    " --frame 1 --resolution 32 --out " + (kWork / "mesh.ply").string()) == 0);
    REQUIRE(fs::exists(kWork / "mesh.ply"));

    REQUIRE(run_cli("estimate-velocity --checkpoint " + (kWork / "s1" / "checkpoint.bin").string() +
                    " --out " + (kWork / "vel.csv").string()) == 0);
    REQUIRE(run_cli("evaluate --pred-velocity " + (kWork / "vel.csv").string() + " --gt-velocity " +
                    (kWork / "data" / "gt" / "velocity.csv").string() + " --out " +
                    (kWork / "metrics.csv").string()) == 0);
    REQUIRE(run_cli("plot --velocity-csv " + (kWork / "vel.csv").string() + " --ref-csv " +
                    (kWork / "data" / "gt" / "velocity.csv").string() + " --dt 0.01 --out " +
                    (kWork / "vel.svg").string()) == 0);
    const std::string svg = slurp(kWork / "vel.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("evaluate on identical inputs reports the ideal metrics") {
    // Reuses the dataset from the pipeline test.
    REQUIRE(fs::exists(kWork / "data"));
    const std::string view = (kWork / "data" / "views" / "cam1").string();
    REQUIRE(run_cli("evaluate --pred " + view + " --gt " + view + " --out " +
                    (kWork / "ideal.csv").string()) == 0);
    bool saw_l1 = false, saw_psnr = false, saw_ssim = false;
    for (const auto& row : read_csv(kWork / "ideal.csv")) {
        REQUIRE(row.size() == 3);
        const double v = std::stod(row[2]);
        if (row[1] == "l1") {
            CHECK(v == 0.0);
            saw_l1 = true;
        } else if (row[1] == "psnr") {
            CHECK(v == 100.0);
            saw_psnr = true;
        } else if (row[1] == "ssim") {
            CHECK(v == 1.0);
            saw_ssim = true;
        }
    }
    CHECK((saw_l1 && saw_psnr && saw_ssim));
}

TEST_CASE("outputs are byte-identical across reruns and thread counts") {
    REQUIRE(fs::exists(kWork / "data"));
    const std::string D = (kWork / "data").string();
    REQUIRE(run_cli("--seed 5 --threads 1 reconstruct --data " + D + " --views cam0,cam2 --config " +
                    (kWork / "config.txt").string() + " --out " + (kWork / "s1_t1").string()) == 0);
    REQUIRE(run_cli("--seed 5 --threads 4 reconstruct --data " + D + " --views cam0,cam2 --config " +
                    (kWork / "config.txt").string() + " --out " + (kWork / "s1_t4").string()) == 0);
    CHECK(slurp(kWork / "s1_t1" / "checkpoint.bin") == slurp(kWork / "s1_t4" / "checkpoint.bin"));
    CHECK(slurp(kWork / "s1_t1" / "loss.csv") == slurp(kWork / "s1_t4" / "loss.csv"));
    // And identical to the first run earlier in this suite.
    CHECK(slurp(kWork / "s1_t1" / "checkpoint.bin") == slurp(kWork / "s1" / "checkpoint.bin"));
}

TEST_CASE("degenerate stage 2 reproduces a stage-1-style rerun bit-exactly") {
    REQUIRE(fs::exists(kWork / "s1" / "checkpoint.bin"));
    const std::string D = (kWork / "data").string();
    // CLI path: identity refiner, all novel weights scaled to zero.
    REQUIRE(run_cli("--seed 5 reconstruct-stage2 --checkpoint " +
                    (kWork / "s1" / "checkpoint.bin").string() + " --refined " +
                    (kWork / "refined").string() + " --data " + D + " --views cam0,cam2 --config " +
                    (kWork / "config.txt").string() + " --novel-weight-scale 0 --out " +
                    (kWork / "s2_zero").string()) == 0);

    // Library path: rerun the sequential loop from the same initialization
    // with input views only.
    const SceneSequence stage1 = read_checkpoint(kWork / "s1" / "checkpoint.bin");
    Dataset ds = Dataset::open(kWork / "data");
    std::vector<CameraModel> inputs;
    for (const auto& cam : ds.cameras)
        if (cam.id != "cam1") inputs.push_back(cam);
    ReconstructionConfig cfg = load_config(kWork / "config.txt");
    cfg.seed = 5;
    StageOptions opt;
    opt.initial_surfels = stage1.frames.front();
    opt.initial_gamma = stage1.gamma;
    opt.densify = false;
    opt.iterations_frame0 = cfg.iterations_stage2;
    opt.iterations_frame = cfg.iterations_stage2;
    const ReconstructionRun rerun = run_reconstruction(ds, inputs, {}, cfg, opt);
    write_checkpoint(kWork / "rerun.bin", rerun.sequence);

    CHECK(slurp(kWork / "s2_zero" / "checkpoint.bin") == slurp(kWork / "rerun.bin"));
}

TEST_CASE("error contract: usage and validation failures") {
    CHECK(run_cli("reconstruct") == 2);                       // missing required --data
    CHECK(run_cli("definitely-not-a-command") == 2);          // unknown subcommand
    CHECK(run_cli("evaluate --out " + (kWork / "x.csv").string()) == 3); // nothing to evaluate
    CHECK(run_cli("extract-mesh --checkpoint " + (kWork / "nope.bin").string()) == 3);
    CHECK(run_cli("refine --rough " + (kWork / "rough").string() + " --hook warp") == 3);

    // Machine-parsable prefix on stderr (captured in the log).
    fs::remove(kWork / "cli.log");
    run_cli("extract-mesh --checkpoint " + (kWork / "nope.bin").string());
    const std::string log = slurp(kWork / "cli.log");
    CHECK(log.find("ERROR:") != std::string::npos);
}

TEST_CASE("print-default-config emits a parsable schema") {
    fs::remove(kWork / "cli.log");
    REQUIRE(run_cli("--print-default-config") == 0);
    const std::string text = slurp(kWork / "cli.log");
    std::istringstream ss(text);
    const ReconstructionConfig cfg = parse_config(parse_kv(ss));
    CHECK(cfg.lr_sdf == 0.05);
    CHECK(cfg.adam_eps == 1e-15);
}
