"""
A new disease appears
=====================

Three hospitals see the novel class grow fast (0, 10, 50, 90 percent of each
task) and two see it grow slowly (0, 0, 10, 50 percent). Before the class
appears no model can recognise it; afterwards the strategies differ in how
fast they pick it up and how much they forget about the other classes.
"""

from fedshift.data import SyntheticSpec
from fedshift.federation import FederationConfig, run_experiment
from fedshift.partition import NovelDiseaseSchedule, PartitionPlan
from fedshift.strategies import StrategyConfig

NOVEL = 2
spec = SyntheticSpec.build([0.5, 0.15, 0.35], [0.25] * 4, n=6000, d=8, class_separation=1.5,
                           attribute_shift=1.0, interaction=0.5, seed=0,
                           class_names=("normal", "pneumonia", "novel"))
plan = PartitionPlan(n_clients=5, n_tasks=4, skewed_fraction=0.4)
schedule = NovelDiseaseSchedule.default(NOVEL, 5)
print("prevalence schedule per client:")
print(schedule.prevalences)

protocol = FederationConfig(rounds_per_task=20, local_steps=5, batch_size=10)
for name in ("ERM", "F-ERM", "F-ER", "F-CB"):
    res = run_experiment(spec, plan, StrategyConfig.parse(name), protocol, 0,
                         model={"learning_rate": 0.1}, schedule=schedule)
    recall = [res.matrix.mean_across_clients(t, "novel_recall") for t in range(4)]
    others = [res.matrix.mean_across_clients(t, "nonnovel_ltr") for t in range(4)]
    print(f"{name:6s} novel recall by task {[round(r, 2) for r in recall]}"
          f"   other-class LTR {[round(o, 2) for o in others]}")
