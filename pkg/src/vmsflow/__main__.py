from vmsflow.cli import main

main()
