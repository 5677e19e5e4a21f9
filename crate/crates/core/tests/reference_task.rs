mod common;

use common::{reference_data, reference_sgd, reference_teacher};
use dts_core::data::{make_blobs, split};
use dts_core::model::train_supervised;
use dts_core::{evaluate, Mlp};

#[test]
fn teacher_reaches_threshold_and_outperforms_the_lone_student() {
    let (train, test) = reference_data();
    assert_eq!((train.len(), test.len()), (1600, 400));
    let teacher = reference_teacher(&train);
    let (teacher_test, _) = evaluate(&teacher, &test).unwrap();
    assert!(teacher_test >= 0.85, "teacher test accuracy {teacher_test}");

    let mut student = Mlp::new(&[16, 16, 10], 0).unwrap();
    train_supervised(&mut student, &train, &reference_sgd(0)).unwrap();
    let (student_test, _) = evaluate(&student, &test).unwrap();
    assert!(student_test < teacher_test, "student {student_test} vs teacher {teacher_test}");
}

#[test]
fn noiseless_blobs_are_learned_perfectly() {
    let data = make_blobs(10, 50, 16, 0.0, 9).unwrap();
    let (train, test) = split(&data, 0.8, 9).unwrap();
    let mut student = Mlp::new(&[16, 16, 10], 0).unwrap();
    train_supervised(&mut student, &train, &reference_sgd(0)).unwrap();
    assert_eq!(evaluate(&student, &train).unwrap().0, 1.0);
    assert_eq!(evaluate(&student, &test).unwrap().0, 1.0);
}
