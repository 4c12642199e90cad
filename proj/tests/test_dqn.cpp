#include "coadapt/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace coadapt;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// One-hot chain state written into the model slots of an observation.
VecX chain_state(int s) {
  VecX x = VecX::Zero(kObsDim);
  x[6 + s] = 1.0;
  return x;
}

}  // namespace

TEST(QNetwork, ZeroParametersGiveZeroOutput) {
  const QNetwork net = QNetwork::make(4, 8, 3);
  EXPECT_EQ(net.forward(VecX::Ones(4)), VecX::Zero(3));
}

TEST(QNetwork, HandSetWeights) {
  QNetwork net({2, 2, 1});
  auto& L = net.layers();
  L[0].W << 1.0, -1.0, 2.0, 0.5;
  L[0].b << 0.0, -1.0;
  L[1].W << 3.0, -2.0;
  L[1].b << 0.25;
  // hidden = relu([1 - 2, 2 + 1 - 1]) = [0, 2]; out = -4 + 0.25
  EXPECT_DOUBLE_EQ(net.forward(VecX((VecX(2) << 1.0, 2.0).finished()))[0], -3.75);
  // hidden = relu([3, 6 - 1]) = [3, 5]; out = 9 - 10 + 0.25
  EXPECT_DOUBLE_EQ(net.forward(VecX((VecX(2) << 3.0, 0.0).finished()))[0], -0.75);
}

TEST(QNetwork, BatchForwardMatchesSingle) {
  QNetwork net = QNetwork::make(5, 16, 4);
  std::mt19937_64 rng(1);
  net.init(rng);
  const MatX X = MatX::Random(5, 7);
  const MatX Y = net.forward_batch(X);
  for (int c = 0; c < 7; ++c) EXPECT_LE((Y.col(c) - net.forward(X.col(c))).norm(), 1e-12);
}

TEST(QNetwork, BackwardMatchesFiniteDifferences) {
  QNetwork net = QNetwork::make(6, 10, 3);
  std::mt19937_64 rng(2);
  net.init(rng);
  for (auto& L : net.layers()) L.b = VecX::Random(L.b.size()) * 0.1;
  const MatX X = MatX::Random(6, 5);
  const MatX C = MatX::Random(3, 5);
  auto loss = [&](const QNetwork& n) { return (n.forward_batch(X).array() * C.array()).sum(); };

  QNetwork::Cache cache;
  net.forward_batch(X, &cache);
  const VecX g = QNetwork::flatten(net.backward(cache, C));
  const VecX p = net.flat_parameters();
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    QNetwork a = net, b = net;
    VecX pa = p, pb = p;
    pa[k] += h;
    pb[k] -= h;
    a.set_flat_parameters(pa);
    b.set_flat_parameters(pb);
    const double fd = (loss(a) - loss(b)) / (2 * h);
    EXPECT_NEAR(g[k], fd, 1e-4 * (1.0 + std::abs(fd))) << "parameter " << k;
  }
}

TEST(QNetwork, RejectsWrongInputSize) {
  const QNetwork net = QNetwork::make(4, 8, 3);
  EXPECT_THROW(net.forward(VecX::Ones(5)), std::invalid_argument);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  QNetwork net({2, 1});
  net.layers()[0].W << 1.0, 2.0;
  net.layers()[0].b << 0.5;
  Adam opt(net, {0.01});
  std::vector<DenseLayer> g(1);
  g[0].W = MatX(1, 2);
  g[0].W << 3.0, -0.2;
  g[0].b = VecX::Constant(1, 0.0);
  opt.step(net, g);
  EXPECT_NEAR(net.layers()[0].W(0, 0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(net.layers()[0].W(0, 1), 2.0 + 0.01, 1e-8);
  EXPECT_EQ(net.layers()[0].b[0], 0.5);
}

TEST(Reward, WorkedExamples) {
  const RewardWeights w;
  EXPECT_DOUBLE_EQ(reward(Vec3::Zero(), 0.0, 0.0, 0, false, w), 2.0);
  EXPECT_DOUBLE_EQ(reward(Vec3(0.01, 0.0, 0.0), 0.0, 0.0, 0, false, w), 1.0 / 1.5);
  const auto t = reward_terms(Vec3::Zero(), 1.0, 2.0, 3, true, w);
  EXPECT_DOUBLE_EQ(t.time, -1.0);
  EXPECT_DOUBLE_EQ(t.effort, -0.1);
  EXPECT_DOUBLE_EQ(t.osc, -0.3);
  EXPECT_DOUBLE_EQ(t.success, 100.0);
  EXPECT_DOUBLE_EQ(t.total, 2.0 - 1.0 - 0.1 - 0.3 + 100.0);
}

TEST(Reward, RewardOneIgnoresTime) {
  const auto w1 = weights_for(RewardVariant::r1, {});
  EXPECT_EQ(reward(Vec3(0.02, 0, 0), 0.5, 1.0, 1, false, w1), reward(Vec3(0.02, 0, 0), 9.0, 1.0, 1, false, w1));
  const auto w2 = weights_for(RewardVariant::r2, {});
  EXPECT_GT(reward(Vec3(0.02, 0, 0), 0.5, 1.0, 1, false, w2), reward(Vec3(0.02, 0, 0), 9.0, 1.0, 1, false, w2));
}

TEST(Reward, AccuracyTermBoundedAndDecreasing) {
  const RewardWeights w;
  double prev = 3.0;
  for (int k = 0; k <= 100; ++k) {
    const double a = reward_terms(Vec3(0.005 * k, 0.0, 0.0), 0, 0, 0, false, w).accuracy;
    EXPECT_GT(a, 0.0);
    EXPECT_LE(a, 2.0 * w.alpha);
    EXPECT_LT(a, prev);
    prev = a;
  }
}

TEST(Reward, WeightValidation) {
  RewardWeights w;
  w.gamma = -1.0;
  EXPECT_THROW(w.validate(), ConfigInvalid);
}

TEST(Observation, LayoutAndRadiusBit) {
  const WorkspaceBox box;
  const VecX s = encode_observation(box, box.lo, box.hi, {2, 3});
  ASSERT_EQ(s.size(), 22);
  EXPECT_EQ(s.head<3>(), Eigen::Vector3d::Constant(-1.0));
  EXPECT_EQ(s.segment<3>(3), Eigen::Vector3d::Constant(1.0));
  EXPECT_EQ(s.tail(16).sum(), 1.0);
  EXPECT_EQ(s[6 + 10], 1.0);
  EXPECT_EQ(robot_observation(s, 1)[22], 0.0);
  EXPECT_EQ(robot_observation(s, 2)[22], 1.0);
}

TEST(ActionSelection, GreedyWhenEpsilonZero) {
  DualAgentLearner l({}, 3);
  std::mt19937_64 rng(1);
  const VecX s = chain_state(4);
  const auto g = l.greedy(s);
  for (int k = 0; k < 50; ++k) {
    const auto a = l.select_actions(s, 0.0, rng);
    EXPECT_EQ(a.action_0, g.action_0);
    EXPECT_EQ(a.action_1, g.action_1);
  }
}

TEST(ActionSelection, UniformWhenEpsilonOne) {
  DualAgentLearner l({}, 3);
  std::mt19937_64 rng(2);
  std::array<int, 2> c0{};
  std::array<int, 8> c1{};
  const int n = 80000;
  for (int k = 0; k < n; ++k) {
    const auto a = l.select_actions(chain_state(0), 1.0, rng);
    ++c0[static_cast<std::size_t>(a.action_0 - 1)];
    ++c1[static_cast<std::size_t>(a.action_1 - 1)];
  }
  double chi0 = 0.0, chi1 = 0.0;
  for (int c : c0) chi0 += std::pow(c - n / 2.0, 2) / (n / 2.0);
  for (int c : c1) chi1 += std::pow(c - n / 8.0, 2) / (n / 8.0);
  EXPECT_LT(chi0, 10.83);  // df 1, p = 0.001
  EXPECT_LT(chi1, 24.32);  // df 7, p = 0.001
}

TEST(ActionSelection, TiesGoToLowestIndex) {
  VecX v = VecX::Zero(8);
  EXPECT_EQ(argmax_index(v), 0);
  v[3] = 1.0;
  v[6] = 1.0;
  EXPECT_EQ(argmax_index(v), 3);
  DualAgentLearner l({}, 0);
  for (auto* net : {&l.net0(), &l.net1()})
    for (auto& L : net->layers()) {
      L.W.setZero();
      L.b.setZero();
    }
  const auto a = l.greedy(chain_state(2));
  EXPECT_EQ(a.action_0, 1);
  EXPECT_EQ(a.action_1, 1);
}

TEST(EpsilonSchedule, LinearDecayThenFloor) {
  const LearnerConfig c;
  EXPECT_DOUBLE_EQ(epsilon_schedule(0, c), 1.0);
  EXPECT_DOUBLE_EQ(epsilon_schedule(5000, c), 0.525);
  EXPECT_DOUBLE_EQ(epsilon_schedule(10000, c), 0.05);
  EXPECT_DOUBLE_EQ(epsilon_schedule(1000000, c), 0.05);
  LearnerConfig z;
  z.eps_decay_steps = 0;
  EXPECT_EQ(epsilon_schedule(0, z), z.eps_end);
}

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer b(3);
  for (int k = 0; k < 5; ++k) {
    Transition t;
    t.reward = k;
    b.push(t);
  }
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.at(0).reward, 2.0);
  EXPECT_EQ(b.at(1).reward, 3.0);
  EXPECT_EQ(b.at(2).reward, 4.0);
}

TEST(ReplayBuffer, UniformSampling) {
  ReplayBuffer b(10);
  for (int k = 0; k < 10; ++k) b.push({});
  std::mt19937_64 rng(5);
  std::array<int, 10> c{};
  const int n = 100000;
  for (auto i : b.sample_indices(n, rng)) ++c[i];
  double chi = 0.0;
  for (int x : c) chi += std::pow(x - n / 10.0, 2) / (n / 10.0);
  EXPECT_LT(chi, 27.88);  // df 9, p = 0.001
}

TEST(ReplayBuffer, ZeroCapacityRejected) { EXPECT_THROW(ReplayBuffer(0), ConfigInvalid); }

TEST(Learner, NoUpdateBeforeBatchIsAvailable) {
  LearnerConfig c;
  c.batch = 4;
  DualAgentLearner l(c, 1);
  std::mt19937_64 rng(1);
  const auto before = l.net0().flat_parameters();
  for (int k = 0; k < 3; ++k) {
    l.remember({chain_state(0), 1, 1, 1.0, chain_state(1), false});
    l.train_step(rng);
  }
  EXPECT_EQ(l.updates(), 0);
  EXPECT_EQ(l.net0().flat_parameters(), before);
}

TEST(Learner, TerminalRewardIsFixedPoint) {
  LearnerConfig c;
  c.batch = 16;
  c.target_period = 50;
  DualAgentLearner l(c, 4);
  std::mt19937_64 rng(4);
  const VecX s = chain_state(5);
  for (int k = 0; k < 16; ++k) l.remember({s, 2, 7, 1.0, chain_state(6), true});
  for (int k = 0; k < 1500; ++k) l.train_step(rng);
  EXPECT_NEAR(l.net0().forward(s)[1], 1.0, 1e-2);
  EXPECT_NEAR(l.net1().forward(robot_observation(s, 2))[6], 1.0, 1e-2);
}

TEST(Learner, ZeroDiscountIgnoresNextState) {
  LearnerConfig c;
  c.discount = 0.0;
  c.batch = 8;
  c.target_period = 5;
  DualAgentLearner a(c, 9), b(c, 9);
  std::mt19937_64 gen(3);
  for (int k = 0; k < 40; ++k) {
    const int s = static_cast<int>(gen() % 16);
    const int a0 = 1 + static_cast<int>(gen() % 2), a1 = 1 + static_cast<int>(gen() % 8);
    const double r = static_cast<double>(gen() % 100) / 10.0;
    a.remember({chain_state(s), a0, a1, r, chain_state(static_cast<int>(gen() % 16)), false});
    b.remember({chain_state(s), a0, a1, r, VecX::Random(kObsDim) * 5.0, false});
  }
  std::mt19937_64 ra(7), rb(7);
  for (int k = 0; k < 30; ++k) {
    a.train_step(ra);
    b.train_step(rb);
  }
  EXPECT_EQ(a.net0().flat_parameters(), b.net0().flat_parameters());
  EXPECT_EQ(a.net1().flat_parameters(), b.net1().flat_parameters());
}

// Chain 0 -> 1 -> 2 -> 3 (terminal). Radius action 2 moves right, 1 stays;
// reward 1 on entering 3. The robot action is irrelevant to the outcome.
TEST(Learner, ChainMdpMatchesValueIteration) {
  const double gamma = 0.9;
  std::array<std::array<double, 2>, 3> Q{};
  for (int it = 0; it < 200; ++it) {
    auto next = Q;
    for (int s = 0; s < 3; ++s) {
      const double v_stay = std::max(Q[static_cast<std::size_t>(s)][0], Q[static_cast<std::size_t>(s)][1]);
      next[static_cast<std::size_t>(s)][0] = gamma * v_stay;
      next[static_cast<std::size_t>(s)][1] =
          s == 2 ? 1.0 : gamma * std::max(Q[static_cast<std::size_t>(s) + 1][0], Q[static_cast<std::size_t>(s) + 1][1]);
    }
    Q = next;
  }

  LearnerConfig c;
  c.discount = gamma;
  c.batch = 32;
  c.target_period = 100;
  DualAgentLearner l(c, 21);
  for (int s = 0; s < 3; ++s)
    for (int a0 = 1; a0 <= 2; ++a0)
      for (int a1 = 1; a1 <= 8; ++a1) {
        const int s2 = a0 == 2 ? s + 1 : s;
        l.remember({chain_state(s), a0, a1, s2 == 3 ? 1.0 : 0.0, chain_state(s2), s2 == 3});
      }
  std::mt19937_64 rng(21);
  for (int k = 0; k < 6000; ++k) l.train_step(rng);

  for (int s = 0; s < 3; ++s)
    for (int a0 = 1; a0 <= 2; ++a0) {
      const double q = Q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a0 - 1)];
      EXPECT_NEAR(l.net0().forward(chain_state(s))[a0 - 1], q, 5e-2) << "s " << s << " a0 " << a0;
      const VecX q1 = l.net1().forward(robot_observation(chain_state(s), a0));
      for (int a1 = 0; a1 < 8; ++a1) EXPECT_NEAR(q1[a1], q, 5e-2) << "s " << s << " a0 " << a0 << " a1 " << a1;
    }
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  DualAgentLearner l({}, 12);
  const auto path = tmp_path("coadapt_ckpt_rt.damm");
  l.save(path);
  const auto r = DualAgentLearner::from_checkpoint(path);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    const VecX s = VecX::Random(kObsDim);
    EXPECT_EQ(l.net0().forward(s), r.net0().forward(s));
    EXPECT_EQ(l.net1().forward(robot_observation(s, 2)), r.net1().forward(robot_observation(s, 2)));
  }
  EXPECT_TRUE(l.net0() == r.net0());
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(DualAgentLearner::from_checkpoint(tmp_path("coadapt_no_such.damm")), MissingCheckpoint);
}

TEST(Checkpoint, CorruptOrTruncatedFile) {
  const auto bad = tmp_path("coadapt_bad.damm");
  {
    std::ofstream o(bad, std::ios::binary);
    o << "NOPE1234";
  }
  EXPECT_THROW(DualAgentLearner::from_checkpoint(bad), FormatError);

  DualAgentLearner l({}, 1);
  const auto good = tmp_path("coadapt_trunc.damm");
  l.save(good);
  std::filesystem::resize_file(good, std::filesystem::file_size(good) / 2);
  EXPECT_THROW(DualAgentLearner::from_checkpoint(good), FormatError);

  save_checkpoint(good, {&l.net0()});
  EXPECT_THROW(DualAgentLearner::from_checkpoint(good), FormatError);
  std::filesystem::remove(bad);
  std::filesystem::remove(good);
}

TEST(Training, DeterministicForFixedSeed) {
  TrainingConfig c;
  c.episodes = 4;
  c.eval_every = 2;
  c.eval_episodes = 2;
  c.learner.batch = 8;
  c.seed = 5;
  const auto a = run_training(c);
  const auto b = run_training(c);
  EXPECT_TRUE(a.net0 == b.net0);
  EXPECT_TRUE(a.net1 == b.net1);
  ASSERT_EQ(a.episodes.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.episodes[k].episode_return, b.episodes[k].episode_return);
  EXPECT_EQ(a.evals.size(), 3u);
}

TEST(Training, ZeroEpisodesKeepsInitialisation) {
  TrainingConfig c;
  c.episodes = 0;
  c.eval_episodes = 1;
  c.seed = 8;
  const auto r = run_training(c);
  const DualAgentLearner fresh(c.learner, 8);
  EXPECT_TRUE(r.net0 == fresh.net0());
  EXPECT_TRUE(r.net1 == fresh.net1());
}

TEST(Training, SeedStreamsAreDisjoint) {
  for (int e = 1; e <= 5000; e += 499) EXPECT_LT(training_seed(1, e), evaluation_seed(0));
}
