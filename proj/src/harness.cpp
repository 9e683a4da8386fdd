#include "evflex/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <chrono>
#include <cmath>
#include <thread>

#include <fmt/format.h>

namespace evflex {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-slot step order of the online loop; checked in debug builds.
enum class Step { quantify, dispatch, disaggregate, queue_update };

struct StepOrder {
    Step last = Step::queue_update;
    void enter(Step s) {
        [[maybe_unused]] auto expected = static_cast<Step>((static_cast<int>(last) + 1) % 4);
        assert(s == expected && "online loop steps out of order");
        last = s;
    }
};

}  // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::proposed: return "proposed";
    case Method::b1: return "b1";
    case Method::b2: return "b2";
    case Method::b3: return "b3";
    case Method::opi: return "opi";
    case Method::mpc: return "mpc";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::proposed, Method::b1, Method::b2, Method::b3, Method::opi, Method::mpc})
        if (to_string(m) == name) return m;
    throw std::invalid_argument(fmt::format("unknown method '{}' (proposed, b1, b2, b3, opi, mpc)", name));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

void RunConfig::validate() const {
    scenario.clock.validate();
    scenario.fleet.validate();
    online.validate();
    dispatch.validate(scenario.clock.horizon_slots);
    if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
}

QueueParams RunConfig::queue_params(const Scenario& sc) const {
    QueueParams q;
    q.delay_weight = online.delay_weight;
    q.rate_cap_kg_per_h = online.rate_cap_kg_per_h;
    q.carbon_weight = online.carbon_weight;
    q.group_durations = sc.group_durations();
    return q;
}

Scenario build_scenario(const RunConfig& cfg) {
    cfg.validate();
    FleetDistribution dist = cfg.scenario.fleet;
    dist.rng_seed = derive_seed(cfg.seed, kFleetStream);
    const SimClock& clock = cfg.scenario.clock;
    auto groups = make_groups(dist, clock);
    std::vector<EvSession> fleet;
    if (dist.fleet_size > 0) fleet = sample_fleet(dist, clock);
    return make_scenario(std::move(fleet), clock, load_carbon_trace(cfg.scenario.carbon, clock),
                         dist.charging_efficiency, std::move(groups));
}

Trajectories run_online(const Scenario& sc, const OnlineParams& prm_in, const DispatchPolicy& policy, bool feedback,
                        bool linear, const QpSettings& settings) {
    sc.validate();
    OnlineParams prm = prm_in;
    prm.slot_duration_h = sc.clock.slot_duration_h;
    prm.validate();
    const double dt = sc.clock.slot_duration_h;
    const double eff = sc.efficiency;
    const int T = sc.clock.horizon_slots;
    const std::size_t K = sc.groups.size();
    const auto durations = sc.group_durations();
    QueueParams qp;
    qp.delay_weight = prm.delay_weight;
    qp.rate_cap_kg_per_h = prm.rate_cap_kg_per_h;
    qp.carbon_weight = prm.carbon_weight;
    qp.group_durations = durations;
    qp.validate();

    Trajectories out;
    out.method = linear ? "b3" : "proposed";
    std::vector<EvSession> fleet = sc.fleet;
    auto members = members_by_arrival(fleet, K);
    FifoLedger ledger(K);    // physical task backlog served by the dispatch
    FifoLedger abstract(K);  // no-feedback mode: backlog served by the lower bounds
    PrechargeCredit credit(fleet.size());
    RatioSource ratios(policy, T);
    QueueState q = QueueState::zero(K);
    std::vector<double> power(fleet.size());
    std::vector<double> must(fleet.size(), 0.0);
    std::vector<double> net_arrivals(K), raw_arrivals(K);
    FifoLedger& tracked = feedback ? ledger : abstract;
    StepOrder order;

    for (int t = 0; t < T; ++t) {
        for (const auto& ev : fleet) {
            if (ev.departure_slot != t) continue;
            auto k = static_cast<std::size_t>(ev.group_index);
            double dropped = 0.0;
            for (const auto& e : ledger.purge(k, ev.id)) dropped += e.power;
            out.abandoned_task_kw += dropped;
            if (feedback) q.charge[k] = std::max(q.charge[k] - dropped, 0.0);
        }
        q.slot = t;
        tracked.observe(q);
        double w = sc.carbon.at(t);

        order.enter(Step::quantify);
        auto start = Clock::now();
        GroupCaps caps = compute_caps(fleet, t, eff, dt, K);
        // The quadratic method keeps every stay completable: each group's
        // lower bound covers what its EVs must take now to still reach
        // their required energy by departure.
        if (!linear) caps.floor = deadline_floor(fleet, t, eff, dt, K, must);
        FlexibilityInterval iv;
        try {
            iv = linear ? solve_slot_linear(q, w, caps, prm) : solve_slot(q, w, caps, prm, durations, settings);
        } catch (const QpError& e) {
            throw SimulationError(fmt::format("{} slot {}: {}", out.method, t, e.what()));
        }
        out.solve_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());

        order.enter(Step::dispatch);
        DispatchDraw draw = draw_dispatch(iv, ratios.next(t));
        std::vector<double> group_dispatch = split_to_groups(iv, draw.gamma);

        order.enter(Step::disaggregate);
        SlotRecord rec;
        rec.slot = t;
        rec.intensity = w;
        rec.gamma = draw.gamma;
        rec.queues = q;
        rec.stage1.assign(K, 0.0);
        rec.stage2.assign(K, 0.0);
        std::vector<double> residual = caps.ev;
        std::fill(power.begin(), power.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            GroupAllocation a = disaggregate_two_stage(k, group_dispatch[k], ledger, members[k], residual, t,
                                                       linear ? std::span<const double>{} : std::span<const double>(must));
            rec.stage1[k] = a.stage1;
            rec.stage2[k] = a.stage2;
            rec.undeliverable += a.undeliverable;
            for (std::size_t j = 0; j < a.per_ev.size(); ++j) {
                auto [id, p] = a.per_ev[j];
                power[static_cast<std::size_t>(id)] += p;
                if (j >= a.stage2_from) credit.add(id, p);
            }
        }
        apply_charging(fleet, power, eff, dt, t);
        for (double p : power) rec.dispatch += p;
        rec.emission_rate = w * rec.dispatch;

        // Tasks arriving during slot t are queued after its service.
        order.enter(Step::queue_update);
        std::fill(net_arrivals.begin(), net_arrivals.end(), 0.0);
        std::fill(raw_arrivals.begin(), raw_arrivals.end(), 0.0);
        for (const auto& ev : fleet) {
            double a = sc.arrivals.per_ev[static_cast<std::size_t>(ev.id)].at(t);
            if (a <= 0.0) continue;
            auto k = static_cast<std::size_t>(ev.group_index);
            raw_arrivals[k] += a;
            double net = credit.net(ev.id, a);
            if (net > 0.0) {
                ledger.enqueue(k, net, t, ev.id);
                net_arrivals[k] += net;
            }
        }
        if (feedback) {
            q = advance_with_dispatch(q, rec.stage1, rec.dispatch, net_arrivals, w, qp);
            rec.arrivals = net_arrivals;
        } else {
            for (std::size_t k = 0; k < K; ++k) abstract.record_service(k, iv.lower[k], t);
            for (const auto& ev : fleet) {
                double a = sc.arrivals.per_ev[static_cast<std::size_t>(ev.id)].at(t);
                if (a > 0.0) abstract.enqueue(static_cast<std::size_t>(ev.group_index), a, t, ev.id);
            }
            q = advance_aggregation(q, iv.lower, iv.upper_total, raw_arrivals, w, qp);
            rec.arrivals = raw_arrivals;
        }
        rec.interval = std::move(iv);
        out.slots.push_back(std::move(rec));
    }
    q.slot = T;
    tracked.observe(q);
    out.final_queues = q;
    out.final_fleet = std::move(fleet);
    for (std::size_t k = 0; k < K; ++k) {
        GroupDelay d;
        d.max_delay = tracked.max_completion_delay(k);
        d.charge_max = tracked.charge_max(k);
        d.delay_max = tracked.delay_max(k);
        d.bound = delay_bound(d.charge_max, d.delay_max, prm.delay_weight, durations[k]);
        out.delays.push_back(d);
    }
    return out;
}

Trajectories run_method(const Scenario& sc, const RunConfig& cfg) {
    DispatchPolicy policy = cfg.dispatch;
    policy.rng_seed = derive_seed(cfg.seed, kDispatchStream);
    const double r = cfg.online.rate_cap_kg_per_h;
    switch (cfg.method) {
    case Method::proposed: return run_online(sc, cfg.online, policy, cfg.feedback, false, cfg.qp);
    case Method::b3: return run_online(sc, cfg.online, policy, cfg.feedback, true, cfg.qp);
    case Method::b1: return run_b1(sc, r);
    case Method::b2: return run_b2(sc, r, policy);
    case Method::opi: return run_opi(sc, r, cfg.epsilon);
    case Method::mpc: return run_mpc(sc, r, policy, cfg.epsilon);
    }
    throw SimulationError("unknown method");
}

RunMetrics compute_metrics(const Trajectories& traj, std::span<const EvSession> initial, const SimClock& clock,
                           std::optional<double> opi_flexibility) {
    if (traj.final_fleet.size() != initial.size()) throw SimulationError("final fleet does not match the scenario");
    RunMetrics m;
    m.method = traj.method;
    const double dt = clock.slot_duration_h;
    double emitted = 0.0;
    for (const auto& s : traj.slots) {
        m.total_flexibility_kwh += (s.interval.upper_total - s.interval.lower_total) * dt;
        emitted += s.emission_rate;
        m.undeliverable_kw += s.undeliverable;
    }
    m.emission_rate_kg_per_h = emitted / clock.horizon_slots;

    double required = 0.0, delivered = 0.0;
    for (std::size_t i = 0; i < initial.size(); ++i) {
        const auto& ev = initial[i];
        double final_e = traj.final_fleet[i].current_energy_kwh;
        double need = ev.required_energy_kwh - ev.initial_energy_kwh;
        m.unfulfilled_energy_kwh += std::max(ev.required_energy_kwh - final_e, 0.0);
        required += need;
        delivered += std::clamp(final_e - ev.initial_energy_kwh, 0.0, need);
    }
    m.fulfillment_ratio = required > 0.0 ? delivered / required : 1.0;
    if (opi_flexibility) {
        if (!(*opi_flexibility > 0.0))
            m.performance_ratio = std::nullopt;
        else
            m.performance_ratio = m.total_flexibility_kwh / *opi_flexibility;
    }

    m.delays = traj.delays;
    for (const auto& d : m.delays)
        if (d.max_delay > d.bound + 1e-9) m.delay_bound_holds = false;
    if (!traj.solve_seconds.empty()) {
        double sum = 0.0;
        for (double s : traj.solve_seconds) {
            sum += s;
            m.max_decision_s = std::max(m.max_decision_s, s);
        }
        m.mean_decision_s = sum / static_cast<double>(traj.solve_seconds.size());
    }
    m.abandoned_task_kw = traj.abandoned_task_kw;
    return m;
}

RunResult run_simulation(const RunConfig& cfg, bool with_opi) {
    RunResult res;
    res.scenario = build_scenario(cfg);
    res.trajectories = run_method(res.scenario, cfg);
    std::optional<double> opi;
    if (with_opi) {
        opi = cfg.method == Method::opi ? compute_metrics(res.trajectories, res.scenario.fleet, res.scenario.clock)
                                              .total_flexibility_kwh
                                        : compute_metrics(run_opi(res.scenario, cfg.online.rate_cap_kg_per_h,
                                                                  cfg.epsilon),
                                                          res.scenario.fleet, res.scenario.clock)
                                              .total_flexibility_kwh;
    }
    res.metrics = compute_metrics(res.trajectories, res.scenario.fleet, res.scenario.clock, opi);
    res.metrics.seed = cfg.seed;
    return res;
}

std::string to_string(SweepParam p) {
    switch (p) {
    case SweepParam::gamma: return "gamma";
    case SweepParam::beta: return "beta";
    case SweepParam::V: return "V";
    case SweepParam::r: return "r";
    case SweepParam::fleet_size: return "fleet_size";
    }
    return "?";
}

SweepParam parse_sweep_param(std::string_view name) {
    for (SweepParam p : {SweepParam::gamma, SweepParam::beta, SweepParam::V, SweepParam::r, SweepParam::fleet_size})
        if (to_string(p) == name) return p;
    throw std::invalid_argument(fmt::format("unknown sweep parameter '{}' (gamma, beta, V, r, fleet_size)", name));
}

void apply_sweep_value(RunConfig& cfg, SweepParam param, double value) {
    switch (param) {
    case SweepParam::gamma:
        cfg.dispatch.mode = DispatchMode::fixed_ratio;
        cfg.dispatch.fixed_ratio = value;
        break;
    case SweepParam::beta: cfg.online.carbon_weight = value; break;
    case SweepParam::V: cfg.online.flexibility_weight = value; break;
    case SweepParam::r: cfg.online.rate_cap_kg_per_h = value; break;
    case SweepParam::fleet_size:
        if (value < 0.0 || value != std::floor(value))
            throw std::invalid_argument(fmt::format("fleet size {} is not a whole number", value));
        cfg.scenario.fleet.fleet_size = static_cast<int>(value);
        break;
    }
}

SweepResult run_sweep(const SweepSpec& spec) {
    if (spec.values.empty()) throw std::invalid_argument("sweep needs at least one value");
    if (spec.replications < 1) throw std::invalid_argument("sweep needs at least one replication");
    SweepResult res;
    for (double v : spec.values)
        for (int j = 0; j < spec.replications; ++j) {
            SweepCell c;
            c.value = v;
            c.replication = j;
            c.seed = j == 0 ? spec.base.seed : derive_seed(spec.base.seed, static_cast<std::uint64_t>(j));
            res.cells.push_back(c);
        }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < res.cells.size(); i = next++) {
            SweepCell& c = res.cells[i];
            try {
                RunConfig cfg = spec.base;
                cfg.seed = c.seed;
                apply_sweep_value(cfg, spec.param, c.value);
                c.metrics = run_simulation(cfg, spec.with_opi).metrics;
            } catch (const std::exception& e) {
                c.error = e.what();
            }
        }
    };
    unsigned n = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
    n = std::min<unsigned>(n, static_cast<unsigned>(res.cells.size()));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (double v : spec.values) {
        SweepRow row;
        row.value = v;
        double perf = 0.0;
        int perf_n = 0;
        for (const auto& c : res.cells) {
            if (c.value != v) continue;
            if (!c.metrics) {
                ++row.failed;
                continue;
            }
            const RunMetrics& m = *c.metrics;
            ++row.completed;
            row.mean.method = m.method;
            row.mean.total_flexibility_kwh += m.total_flexibility_kwh;
            row.mean.emission_rate_kg_per_h += m.emission_rate_kg_per_h;
            row.mean.unfulfilled_energy_kwh += m.unfulfilled_energy_kwh;
            row.mean.fulfillment_ratio += m.fulfillment_ratio;
            row.mean.mean_decision_s += m.mean_decision_s;
            row.mean.max_decision_s = std::max(row.mean.max_decision_s, m.max_decision_s);
            row.mean.delay_bound_holds = row.mean.delay_bound_holds && m.delay_bound_holds;
            if (m.performance_ratio) {
                perf += *m.performance_ratio;
                ++perf_n;
            }
        }
        if (row.completed > 0) {
            double n_done = row.completed;
            row.mean.total_flexibility_kwh /= n_done;
            row.mean.emission_rate_kg_per_h /= n_done;
            row.mean.unfulfilled_energy_kwh /= n_done;
            row.mean.fulfillment_ratio /= n_done;
            row.mean.mean_decision_s /= n_done;
        } else {
            row.mean.fulfillment_ratio = 0.0;
        }
        if (perf_n > 0) row.mean.performance_ratio = perf / perf_n;
        res.rows.push_back(row);
    }
    return res;
}

std::vector<TimingRow> benchmark_timing(std::span<const int> sizes, const RunConfig& base, bool include_opi) {
    std::vector<TimingRow> rows;
    for (int n : sizes) {
        if (n < 0) throw std::invalid_argument(fmt::format("fleet size {} is negative", n));
        RunConfig cfg = base;
        cfg.method = Method::proposed;
        cfg.scenario.fleet.fleet_size = n;
        // The cap grows with the fleet so the carbon queue binds alike.
        int base_size = base.scenario.fleet.fleet_size;
        if (base_size > 0 && n > 0) cfg.online.rate_cap_kg_per_h = base.online.rate_cap_kg_per_h * n / base_size;
        RunResult r = run_simulation(cfg);
        TimingRow row;
        row.fleet_size = n;
        row.mean_decision_s = r.metrics.mean_decision_s;
        row.max_decision_s = r.metrics.max_decision_s;
        if (include_opi && n > 0)
            row.opi_s = run_opi(r.scenario, cfg.online.rate_cap_kg_per_h, cfg.epsilon).solve_seconds.at(0);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace evflex
